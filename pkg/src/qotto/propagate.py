"""Second-order Trotter propagation of the full master equation with an
exact per-channel energy ledger.

All dissipative maps are superoperator exponentials computed once per
(channel, stroke, dt) and cached; the oscillator damping acts on the mode
factor (it is basis independent) and the thermal channels act on the qubit
factor in the stroke eigenbasis.  The unitary half steps use the midpoint
Hamiltonian, whose exponential reduces to two cached displaced-oscillator
block exponentials plus scalar phases, so ramps cost the same as holds.

Work on ramp strokes accumulates from Hamiltonian differences,
sum over steps of <H(t+dt) - H_mid>_new + <H_mid - H(t)>_old, which makes the
ledger closure identity exact at every sample by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import kernels
from .config import EngineConfig
from .kernels import (COL_DE_COLD, COL_DE_HOT, COL_DE_OSC, COL_E_DEPH, COL_H_INT,
                      COL_H_OSC, COL_H_S, COL_MIN_EIG, COL_P_E, COL_T, COL_TRACE,
                      COL_W, CUM_DE_COLD, CUM_DE_HOT, CUM_DE_OSC, CUM_W, N_COLS)
from .linalg import annihilation
from .model import basis_rotation, gap, mixing_angle

STROKES = ("compression", "hot", "expansion", "cold")


class NumericsError(RuntimeError):
    """Propagation failure (positivity breach, non-convergence); CLI exit code 1."""


def lindblad_superop(ops_rates, dim: int) -> np.ndarray:
    """Dense generator on row-major vec(rho) from (jump_op, rate) pairs."""
    ident = np.eye(dim, dtype=np.complex128)
    s = np.zeros((dim * dim, dim * dim), dtype=np.complex128)
    for op, rate in ops_rates:
        ldl = op.conj().T @ op
        s += rate * (np.kron(op, op.conj())
                     - 0.5 * np.kron(ldl, ident)
                     - 0.5 * np.kron(ident, ldl.T))
    return s


def osc_channel_blocks(gamma: float, n_osc: float, dt: float, n: int):
    """exp(L_osc dt) packed as real blocks over Fock-diagonal offsets.

    The damping generator maps each diagonal rho_{m, m+k} onto itself through a
    real tridiagonal matrix L_k, so the channel factorizes into N small real
    exponentials.  Matches the dense truncated superoperator exactly (the
    thermal-excitation diagonal term uses the truncated b b^dag, which vanishes
    on the top level).
    """
    sizes = np.array([n - k for k in range(n)], dtype=np.int64)
    off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(sizes**2, out=off[1:])
    flat = np.zeros(int(off[-1]))
    bbdag = np.array([m + 1 if m < n - 1 else 0 for m in range(n)], dtype=float)
    for k in range(n):
        s = n - k
        lk = np.zeros((s, s))
        for m in range(s):
            lk[m, m] = (-0.5 * gamma * (1.0 + n_osc) * (2 * m + k)
                        - 0.5 * gamma * n_osc * (bbdag[m] + bbdag[m + k]))
            if m + 1 < s:
                lk[m, m + 1] = gamma * (1.0 + n_osc) * math.sqrt((m + 1) * (m + k + 1))
            if m >= 1:
                lk[m, m - 1] = gamma * n_osc * math.sqrt(m * (m + k))
        g = scipy.linalg.expm(lk * dt)
        flat[off[k]:off[k + 1]] = g.reshape(-1)
    return flat, off


@dataclass
class StrokeBundle:
    """Precomputed per-stroke propagator pieces at a fixed dt."""

    name: str
    n_steps: int
    dt: float
    is_ramp: bool
    th_channel: int              # 0 none, 1 hot, 2 cold
    phi_mid: np.ndarray
    eps_mid: np.ndarray
    phi_edge: np.ndarray
    eps_edge: np.ndarray
    up_half: np.ndarray
    um_half: np.ndarray
    gosc_flat: np.ndarray
    gosc_off: np.ndarray
    use_gosc: bool
    gth4: np.ndarray
    sample_steps: np.ndarray


class EngineModel:
    """Resolved engine: dimensions, operators, stroke schedule, propagator caches."""

    def __init__(self, config: EngineConfig):
        self.config = config
        self.dt_target = config.resolved_dt()
        self.n_max = config.resolved_n_max()
        self.n_levels = self.n_max + 1
        deph = config.dephasing
        self.Gamma = 0.0 if deph is None else deph.Gamma
        self.omega0 = 0.0 if deph is None else deph.omega0
        self.gamma_osc = 0.0 if deph is None else deph.gamma
        self.n_osc = 0.0 if deph is None else deph.n_osc
        n = self.n_levels
        b = annihilation(n)
        self.b = b
        self.xmat = np.ascontiguousarray(b + b.conj().T)
        self.ndiag = np.arange(n, dtype=float)
        self._bundles: dict = {}
        self._phi_max = mixing_angle(config.omega, config.omega_rabi_max)

    # -- stroke geometry ---------------------------------------------------

    def stroke_schedule(self):
        s = self.config.strokes
        return [("compression", s.tau_com), ("hot", s.tau_h),
                ("expansion", s.tau_exp), ("cold", s.tau_c)]

    def omega_rabi_local(self, stroke: str, tl, tau: float):
        om = self.config.omega_rabi_max
        if stroke == "compression":
            return om * tl / tau
        if stroke == "hot":
            return om * np.ones_like(tl)
        if stroke == "expansion":
            return om * (1.0 - tl / tau)
        if stroke == "cold":
            return np.zeros_like(tl)
        raise ValueError(f"unknown stroke '{stroke}'")

    def basis_angle(self, stroke: str) -> float:
        """Eigenbasis angle on a thermal stroke (constant there)."""
        return self._phi_max if stroke == "hot" else 0.0

    # -- cached propagator pieces -------------------------------------------

    def bundle(self, stroke: str, tau: float, dt_target: float | None = None,
               samples_per_stroke: int | None = None) -> StrokeBundle:
        dt_target = dt_target or self.dt_target
        spp = samples_per_stroke or self.config.numerics.samples_per_stroke
        n_steps = max(1, round(tau / dt_target))
        dt = tau / n_steps
        key = (stroke, n_steps, round(tau, 15), spp)
        hit = self._bundles.get(key)
        if hit is not None:
            return hit

        tl_edge = np.linspace(0.0, tau, n_steps + 1)
        tl_mid = tl_edge[:-1] + 0.5 * dt
        om_edge = self.omega_rabi_local(stroke, tl_edge, tau)
        om_mid = self.omega_rabi_local(stroke, tl_mid, tau)
        omega = self.config.omega
        phi_edge = np.arctan2(om_edge, omega)
        phi_mid = np.arctan2(om_mid, omega)
        eps_edge = np.hypot(omega, om_edge)
        eps_mid = np.hypot(omega, om_mid)

        n = self.n_levels
        up_half = _herm_expm(self.omega0 * np.diag(self.ndiag) + self.Gamma * self.xmat,
                             0.5 * dt)
        um_half = _herm_expm(self.omega0 * np.diag(self.ndiag) - self.Gamma * self.xmat,
                             0.5 * dt)
        use_gosc = n > 1
        if use_gosc:
            gosc_flat, gosc_off = osc_channel_blocks(self.gamma_osc, self.n_osc, dt, n)
        else:
            gosc_flat, gosc_off = np.ones(1), np.array([0, 1], dtype=np.int64)

        th_channel = {"hot": 1, "cold": 2}.get(stroke, 0)
        if th_channel:
            bath = self.config.hot if th_channel == 1 else self.config.cold
            sp = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=np.complex128)  # |e><g|, e = index 0
            lth = lindblad_superop([(sp, bath.gamma * bath.n),
                                    (sp.conj().T, bath.gamma * (bath.n + 1.0))], 2)
            gth4 = np.ascontiguousarray(scipy.linalg.expm(lth * dt).reshape(2, 2, 2, 2))
        else:
            gth4 = np.eye(4, dtype=np.complex128).reshape(2, 2, 2, 2)

        stride = max(1, n_steps // spp)
        steps = np.arange(stride - 1, n_steps, stride, dtype=np.int64)
        if steps.size == 0 or steps[-1] != n_steps - 1:
            steps = np.append(steps, n_steps - 1)
        bundle = StrokeBundle(
            name=stroke, n_steps=n_steps, dt=dt,
            is_ramp=stroke in ("compression", "expansion"),
            th_channel=th_channel,
            phi_mid=phi_mid, eps_mid=eps_mid, phi_edge=phi_edge, eps_edge=eps_edge,
            up_half=up_half, um_half=um_half, gosc_flat=gosc_flat,
            gosc_off=gosc_off, use_gosc=use_gosc,
            gth4=gth4, sample_steps=steps,
        )
        self._bundles[key] = bundle
        return bundle

    # -- states --------------------------------------------------------------

    def initial_state(self) -> np.ndarray:
        """Factorized start: qubit at the cold-bath fixed point x oscillator at the
        damped mode's stationary occupation (vacuum at beta = inf)."""
        n = self.n_levels
        rho = np.zeros((2, 2, n, n), dtype=np.complex128)
        p_e = self.config.cold.n / (2.0 * self.config.cold.n + 1.0)
        if self.n_osc > 0:
            r = self.n_osc / (self.n_osc + 1.0)
            p = r ** np.arange(n)
            p /= p.sum()
        else:
            p = np.zeros(n)
            p[0] = 1.0
        rho[0, 0] = p_e * np.diag(p)
        rho[1, 1] = (1.0 - p_e) * np.diag(p)
        return rho

    def as_matrix(self, rho_blocks: np.ndarray) -> np.ndarray:
        n = self.n_levels
        m = np.empty((2 * n, 2 * n), dtype=np.complex128)
        for a in range(2):
            for b in range(2):
                m[a * n:(a + 1) * n, b * n:(b + 1) * n] = rho_blocks[a, b]
        return m

    def as_blocks(self, mat: np.ndarray) -> np.ndarray:
        n = self.n_levels
        rho = np.empty((2, 2, n, n), dtype=np.complex128)
        for a in range(2):
            for b in range(2):
                rho[a, b] = mat[a * n:(a + 1) * n, b * n:(b + 1) * n]
        return rho

    def lab_energy(self, rho_blocks: np.ndarray, phi: float, eps: float) -> float:
        return float(kernels._lab_energy(rho_blocks, self.xmat, self.ndiag, phi, eps,
                                         self.Gamma, self.omega0))

    def lab_components(self, rho_blocks: np.ndarray, phi: float):
        return kernels._lab_components(rho_blocks, self.xmat, self.ndiag, phi)


def _herm_expm(h: np.ndarray, dt: float) -> np.ndarray:
    w, v = np.linalg.eigh(h)
    return np.ascontiguousarray((v * np.exp(-1j * w * dt)) @ v.conj().T)


# ---------------------------------------------------------------------------
# Ledger


@dataclass
class StrokeMark:
    name: str
    row0: int
    row1: int
    t0: float
    t1: float
    cums0: np.ndarray
    cums1: np.ndarray


@dataclass
class EnergyLedger:
    """Sampled time series plus running per-channel energy sums."""

    rows: list = field(default_factory=list)
    marks: list = field(default_factory=list)
    cums: np.ndarray = field(default_factory=lambda: np.zeros(4))
    comps: np.ndarray = field(default_factory=lambda: np.zeros(4))
    states: list = field(default_factory=list)
    state_rows: list = field(default_factory=list)

    def samples(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, N_COLS))
        return np.vstack(self.rows)

    def column(self, col: int) -> np.ndarray:
        return self.samples()[:, col]

    @property
    def de_osc(self) -> float:
        return float(self.cums[CUM_DE_OSC])

    @property
    def de_hot(self) -> float:
        return float(self.cums[CUM_DE_HOT])

    @property
    def de_cold(self) -> float:
        return float(self.cums[CUM_DE_COLD])

    @property
    def work(self) -> float:
        return float(self.cums[CUM_W])

    def e_deph(self, index: int = -1) -> float:
        """Energy stored in the dephasing environment at a sampled time."""
        return float(self.samples()[index, COL_E_DEPH])

    def closure_residuals(self) -> np.ndarray:
        """<H_D(t)> - <H_D(t_first)> - W(t) - sum of channel energies, per sample."""
        s = self.samples()
        h_d = s[:, COL_H_S] + s[:, COL_H_INT] + s[:, COL_H_OSC]
        exchanged = s[:, COL_DE_OSC] + s[:, COL_DE_HOT] + s[:, COL_DE_COLD] + s[:, COL_W]
        ref = h_d[0] - exchanged[0]
        return h_d - exchanged - ref

    def stroke_de_osc(self, mark: StrokeMark) -> float:
        return float(mark.cums1[CUM_DE_OSC] - mark.cums0[CUM_DE_OSC])

    def stroke_de_th(self, mark: StrokeMark) -> float:
        i = CUM_DE_HOT if mark.name == "hot" else CUM_DE_COLD
        return float(mark.cums1[i] - mark.cums0[i])

    def trajectory_columns(self):
        """Rows of the trajectory CSV (t, H_S, H_int, H_osc, E_deph, cumulative
        channel energies, instantaneous excited population)."""
        s = self.samples()
        return np.column_stack([
            s[:, COL_T], s[:, COL_H_S], s[:, COL_H_INT], s[:, COL_H_OSC],
            s[:, COL_E_DEPH], s[:, COL_DE_HOT], s[:, COL_DE_COLD],
            s[:, COL_DE_OSC], s[:, COL_P_E],
        ])


TRAJECTORY_HEADER = ("t", "H_S", "H_int", "H_osc", "E_deph",
                     "dE_hot_cum", "dE_cold_cum", "dE_osc_cum", "p_e_inst")


@dataclass
class PropagatorState:
    """Single-owner evolving state: density-matrix blocks plus the engine clock."""

    model: EngineModel
    rho: np.ndarray
    t: float = 0.0

    def copy(self) -> "PropagatorState":
        return PropagatorState(self.model, self.rho.copy(), self.t)


def _initial_row(state: PropagatorState, stroke: str, ledger: EnergyLedger,
                 bundle: StrokeBundle):
    m = state.model
    row = kernels.observable_row(state.rho, state.t, bundle.phi_edge[0],
                                 bundle.eps_edge[0], m.Gamma, m.omega0,
                                 m.xmat, m.ndiag, ledger.cums)
    ledger.rows.append(row.reshape(1, -1))


def evolve_stroke(state: PropagatorState, stroke: str, ledger: EnergyLedger | None = None,
                  tau: float | None = None, retain_states: bool = False,
                  dt_target: float | None = None) -> PropagatorState:
    """Integrate one stroke in place; thermal channels act only on their stroke."""
    if stroke not in STROKES:
        raise ValueError(f"stroke must be one of {STROKES}, got '{stroke}'")
    m = state.model
    if tau is None:
        tau = dict(m.stroke_schedule())[stroke]
    if ledger is None:
        ledger = EnergyLedger()
    bundle = m.bundle(stroke, tau, dt_target=dt_target)
    if not ledger.rows:
        _initial_row(state, stroke, ledger, bundle)
    n_samp = bundle.sample_steps.size
    out = np.zeros((n_samp, N_COLS))
    n = m.n_levels
    states_out = np.zeros((n_samp if retain_states else 0, 2, 2, n, n),
                          dtype=np.complex128)
    row0 = sum(r.shape[0] for r in ledger.rows)
    cums0 = ledger.cums.copy()
    status = kernels.stroke_loop(
        state.rho, bundle.dt, state.t,
        bundle.phi_mid, bundle.eps_mid, bundle.phi_edge, bundle.eps_edge,
        1 if bundle.is_ramp else 0,
        bundle.up_half, bundle.um_half, bundle.gosc_flat, bundle.gosc_off,
        1 if bundle.use_gosc else 0,
        bundle.gth4, bundle.th_channel,
        m.xmat, m.ndiag, m.Gamma, m.omega0,
        bundle.sample_steps, ledger.cums, ledger.comps,
        m.config.numerics.positivity_abort,
        out, states_out, 1 if retain_states else 0,
    )
    if status >= 0:
        written = int(np.searchsorted(bundle.sample_steps, status, side="right"))
        ledger.rows.append(out[:written])
        bad = out[written - 1] if written else None
        raise NumericsError(
            f"positivity breach during '{stroke}' at step {status} "
            f"(t ~ {state.t + (status + 1) * bundle.dt:.6g}): min eigenvalue "
            f"{bad[COL_MIN_EIG] if bad is not None else float('nan'):.3e} "
            f"below -{m.config.numerics.positivity_abort:g}"
        )
    ledger.rows.append(out)
    if retain_states:
        ledger.states.extend(states_out)
        ledger.state_rows.extend(range(row0, row0 + n_samp))
    state.t += tau
    ledger.marks.append(StrokeMark(stroke, row0, row0 + n_samp, state.t - tau, state.t,
                                   cums0, ledger.cums.copy()))
    return state


def trotter_step(state: PropagatorState, dt: float, ledger: EnergyLedger | None = None,
                 stroke: str | None = None) -> PropagatorState:
    """One Trotter step; the stroke is inferred from the engine clock if not given."""
    m = state.model
    if stroke is None:
        stroke = stroke_at(m.config, state.t)
    tau_stroke = dict(m.stroke_schedule())[stroke]
    if dt <= 0:
        raise ValueError("dt must be positive")
    # A one-step bundle anchored at the current local time within the stroke.
    t_local = _local_time(m.config, state.t)
    bundle = m.bundle(stroke, tau_stroke, dt_target=dt)
    k = min(int(round(t_local / bundle.dt)), bundle.n_steps - 1)
    sub = StrokeBundle(
        name=bundle.name, n_steps=1, dt=bundle.dt, is_ramp=bundle.is_ramp,
        th_channel=bundle.th_channel,
        phi_mid=bundle.phi_mid[k:k + 1], eps_mid=bundle.eps_mid[k:k + 1],
        phi_edge=bundle.phi_edge[k:k + 2], eps_edge=bundle.eps_edge[k:k + 2],
        up_half=bundle.up_half, um_half=bundle.um_half,
        gosc_flat=bundle.gosc_flat, gosc_off=bundle.gosc_off,
        use_gosc=bundle.use_gosc, gth4=bundle.gth4,
        sample_steps=np.array([0], dtype=np.int64),
    )
    if ledger is None:
        ledger = EnergyLedger()
    if not ledger.rows:
        _initial_row(state, stroke, ledger, sub)
    out = np.zeros((1, N_COLS))
    states_out = np.zeros((0, 2, 2, m.n_levels, m.n_levels), dtype=np.complex128)
    row0 = sum(r.shape[0] for r in ledger.rows)
    cums0 = ledger.cums.copy()
    status = kernels.stroke_loop(
        state.rho, sub.dt, state.t,
        sub.phi_mid, sub.eps_mid, sub.phi_edge, sub.eps_edge,
        1 if sub.is_ramp else 0,
        sub.up_half, sub.um_half, sub.gosc_flat, sub.gosc_off,
        1 if sub.use_gosc else 0,
        sub.gth4, sub.th_channel,
        m.xmat, m.ndiag, m.Gamma, m.omega0,
        sub.sample_steps, ledger.cums, ledger.comps,
        m.config.numerics.positivity_abort,
        out, states_out, 0,
    )
    if status >= 0:
        raise NumericsError(f"positivity breach in trotter_step at t={state.t:.6g}")
    ledger.rows.append(out)
    ledger.marks.append(StrokeMark(stroke, row0, row0 + 1, state.t, state.t + sub.dt,
                                   cums0, ledger.cums.copy()))
    state.t += sub.dt
    return state


def dissipative_step(state: PropagatorState, channel: str, dt: float):
    """Apply the exact channel map exp(L_channel dt); returns (state, dE).

    dE = Tr{H_D(t) (rho' - rho)} with the composite Hamiltonian at the current
    clock time.  The oscillator channel is basis independent; thermal channels
    use the eigenbasis of the stroke they belong to.
    """
    m = state.model
    n = m.n_levels
    t_mod = state.t % m.config.strokes.tau_cycle if m.config.strokes.tau_cycle > 0 else state.t
    from .model import rabi as _rabi

    om = _rabi(t_mod, m.config.drive)
    phi = mixing_angle(m.config.omega, om)
    eps = gap(m.config.omega, om)
    e0 = m.lab_energy(state.rho, phi, eps)
    if channel == "osc":
        if m.n_levels > 1:
            gflat, goff = osc_channel_blocks(m.gamma_osc, m.n_osc, dt, n)
            kernels._apply_gosc(state.rho, gflat, goff)
    elif channel in ("hot", "cold"):
        stroke = stroke_at(m.config, state.t)
        if stroke != channel:
            raise NumericsError(f"channel '{channel}' is not active during '{stroke}'")
        bath = m.config.hot if channel == "hot" else m.config.cold
        sp = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=np.complex128)
        lth = lindblad_superop([(sp, bath.gamma * bath.n),
                                (sp.conj().T, bath.gamma * (bath.n + 1.0))], 2)
        gth4 = np.ascontiguousarray(scipy.linalg.expm(lth * dt).reshape(2, 2, 2, 2))
        r = basis_rotation(phi)
        kernels._rotate(state.rho, np.ascontiguousarray(r))
        kernels._apply_gth(state.rho, gth4)
        kernels._rotate(state.rho, np.ascontiguousarray(r))
    elif channel == "none":
        pass
    else:
        raise ValueError(f"unknown channel '{channel}'")
    e1 = m.lab_energy(state.rho, phi, eps)
    lam = kernels._min_eig(state.rho)
    if lam < -m.config.numerics.positivity_abort:
        raise NumericsError(f"positivity breach after '{channel}' step: {lam:.3e}")
    return state, e1 - e0


def stroke_at(config: EngineConfig, t: float) -> str:
    """Stroke containing engine time t (reduced modulo the cycle)."""
    tau = config.strokes.tau_cycle
    tl = t % tau if tau > 0 else t
    b = config.drive.boundaries
    for name, lo, hi in zip(STROKES, b[:-1], b[1:]):
        if tl < hi - 1e-12:
            return name
    return "cold"


def _local_time(config: EngineConfig, t: float) -> float:
    tau = config.strokes.tau_cycle
    tl = t % tau if tau > 0 else t
    b = config.drive.boundaries
    for lo, hi in zip(b[:-1], b[1:]):
        if tl < hi - 1e-12:
            return tl - lo
    return tl - b[3]

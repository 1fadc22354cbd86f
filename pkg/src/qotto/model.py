"""Physical model construction for the driven two-level engine.

Conventions (hbar = k_B = 1):

* The work medium Hamiltonian is H_S(t) = (omega/2) sigma_z + (Omega(t)/2) sigma_x
  in the fixed computational basis, equal to (eps(t)/2) sz(t) with
  eps(t) = sqrt(omega^2 + Omega(t)^2) and sz(t) the Pauli-z operator of the
  instantaneous eigenbasis.
* Thermal baths are parametrized by their mean photon number n and coupling
  rate gamma; temperatures are derived metadata only (T = eps / ln(1 + 1/n)).
* The dephasing environment is one harmonic mode at frequency omega0, coupled
  with strength Gamma to sz(t) and damped at rate gamma toward a reservoir at
  inverse temperature beta (beta = inf allowed), which realizes a Lorentzian
  spectral density of width gamma and height 2 Gamma^2/gamma centered at omega0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import HilbertLayout, Operator, annihilation

SIGMA_Z0 = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)
SIGMA_X0 = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Drive profile


@dataclass(frozen=True)
class DriveProfile:
    """Piecewise-linear Rabi drive over one engine cycle.

    The cycle starts at the cold end: ramp up (compression), hold at
    omega_rabi_max (hot stroke), ramp down (expansion), hold at zero
    (cold stroke).  Omega(t) is continuous at all stroke boundaries.
    """

    omega: float
    omega_rabi_max: float
    tau_com: float
    tau_h: float
    tau_exp: float
    tau_c: float

    @property
    def boundaries(self) -> tuple[float, float, float, float, float]:
        t1 = self.tau_com
        t2 = t1 + self.tau_h
        t3 = t2 + self.tau_exp
        t4 = t3 + self.tau_c
        return (0.0, t1, t2, t3, t4)

    @property
    def tau_cycle(self) -> float:
        return self.boundaries[4]


def rabi(t: float, profile: DriveProfile) -> float:
    """Omega(t) within one cycle (caller reduces t modulo the cycle period)."""
    t0, t1, t2, t3, t4 = profile.boundaries
    if t < t0 - 1e-12 or t > t4 + 1e-12:
        raise ModelError(f"t={t} outside the cycle [0, {t4}]")
    om = profile.omega_rabi_max
    if t < t1:
        return om * (t - t0) / (t1 - t0)
    if t < t2:
        return om
    if t < t3:
        return om * (t3 - t) / (t3 - t2)
    return 0.0


def gap(omega: float, Omega: float) -> float:
    """Instantaneous energy gap eps = sqrt(omega^2 + Omega^2)."""
    return math.hypot(omega, Omega)


def mixing_angle(omega: float, Omega: float) -> float:
    """Rotation angle phi of the instantaneous eigenbasis, tan(phi) = Omega/omega."""
    return math.atan2(Omega, omega)


def instantaneous_eigensystem(omega: float, Omega: float):
    """Gap and eigenkets (ground, excited) of (omega/2) sz + (Omega/2) sx.

    Phase convention: the ground ket's amplitude on |0> is real and
    non-negative; when that amplitude vanishes, the amplitude on |1> is made
    real and positive.  This keeps sz(t) and the ladder operators reproducible.
    """
    if omega == 0.0 and Omega == 0.0:
        raise ModelError("degenerate Hamiltonian: omega = Omega = 0")
    eps = gap(omega, Omega)
    phi = mixing_angle(omega, Omega)
    c, s = math.cos(phi / 2.0), math.sin(phi / 2.0)
    excited = np.array([c, s], dtype=np.complex128)
    ground = np.array([-s, c], dtype=np.complex128)
    for ket in (ground, excited):
        if abs(ket[0]) > 1e-14:
            if ket[0].real < 0:
                ket *= -1.0
        elif ket[1].real < 0:
            ket *= -1.0
    return eps, ground, excited


def sigma_z_at(omega: float, Omega: float) -> np.ndarray:
    """sz(t) = |e><e| - |g><g| in the computational basis."""
    _, g, e = instantaneous_eigensystem(omega, Omega)
    return np.outer(e, e.conj()) - np.outer(g, g.conj())


def basis_rotation(phi: float) -> np.ndarray:
    """Real symmetric 2x2 matrix with columns (|e>, |g>) up to ket phases.

    R(phi) is orthogonal and involutive (a reflection), so the same matrix
    maps both ways between the computational and the instantaneous basis.
    """
    c, s = math.cos(phi / 2.0), math.sin(phi / 2.0)
    return np.array([[c, s], [s, -c]])


# ---------------------------------------------------------------------------
# Bath parameters and spectral densities


@dataclass(frozen=True)
class ThermalBathParams:
    """Mean photon number and dissipative coupling rate of one thermal bath."""

    n: float
    gamma: float
    label: str = ""

    def __post_init__(self):
        if self.n < 0 or self.gamma < 0:
            raise ModelError(f"thermal bath needs n >= 0 and gamma >= 0, got {self}")

    def temperature(self, eps: float) -> float:
        """Derived metadata: T such that n = 1/(e^{eps/T} - 1)."""
        if self.n == 0:
            return 0.0
        return eps / math.log(1.0 + 1.0 / self.n)


@dataclass(frozen=True)
class DephasingBathParams:
    """Lorentzian dephasing environment: coupling Gamma, width gamma, center omega0."""

    Gamma: float
    gamma: float
    omega0: float
    beta: float = math.inf

    def __post_init__(self):
        if self.Gamma < 0 or self.gamma <= 0 or self.omega0 <= 0:
            raise ModelError(f"need Gamma >= 0, gamma > 0, omega0 > 0, got {self}")
        if not (self.beta > 0):
            raise ModelError(f"need beta > 0 (inf allowed), got beta={self.beta}")

    @property
    def n_osc(self) -> float:
        """Mean photon number of the damped mode's reservoir."""
        if math.isinf(self.beta):
            return 0.0
        return 1.0 / math.expm1(self.beta * self.omega0)

    @property
    def coth_half(self) -> float:
        """coth(beta omega0 / 2); equals 1 at beta = inf."""
        if math.isinf(self.beta):
            return 1.0
        return 1.0 / math.tanh(0.5 * self.beta * self.omega0)


def lorentzian_sd(w, params: DephasingBathParams):
    """J(w) = 2 Gamma^2 gamma / (gamma^2 + 4 (w - omega0)^2)."""
    w = np.asarray(w, dtype=float)
    out = 2.0 * params.Gamma**2 * params.gamma / (
        params.gamma**2 + 4.0 * (w - params.omega0) ** 2
    )
    return out if out.ndim else float(out)


def thermalized_sd(w, params: DephasingBathParams):
    """Finite-temperature extension of the Lorentzian:

    J_beta(w) = J(w) (coth(beta omega0/2) + 1)/2 + J(-w) (coth(beta omega0/2) - 1)/2
    """
    w = np.asarray(w, dtype=float)
    c = params.coth_half
    out = 0.5 * (c + 1.0) * lorentzian_sd(w, params) + 0.5 * (c - 1.0) * lorentzian_sd(-w, params)
    return out if out.ndim else float(out)


def alt_sd(w, params: DephasingBathParams):
    """Alternative convention J'(w) = 2 Gamma^2 gamma omega0 w / (gamma^2 w^2 + (w^2 - omega0^2)^2).

    Converges to the plain Lorentzian for gamma/omega0 << 1.
    """
    w = np.asarray(w, dtype=float)
    num = 2.0 * params.Gamma**2 * params.gamma * params.omega0 * w
    den = params.gamma**2 * w**2 + (w**2 - params.omega0**2) ** 2
    out = num / den
    return out if out.ndim else float(out)


def alt_thermalized_sd(w, params: DephasingBathParams):
    """J'_beta(w) = sgn(w) J'(|w|) (coth(w beta / 2) + 1)/2 (with the alt convention).

    The coth argument here uses w itself, not omega0; at beta = inf this
    reduces to J'(w) on w > 0 and 0 on w < 0.
    """
    w = np.asarray(w, dtype=float)
    base = np.sign(w) * alt_sd(np.abs(w), params)
    if math.isinf(params.beta):
        weight = 0.5 * (np.sign(w) + 1.0)
    else:
        weight = 0.5 * (1.0 / np.tanh(0.5 * params.beta * w) + 1.0)
    out = base * weight
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Lindblad generators


@dataclass
class Liouvillian:
    """Named dissipative channel: jump operators with rates, plus its stroke window.

    ``apply`` evaluates the generator L[rho] (not its exponential) on raw
    matrices of the stated dimension.  Generators are immutable after
    construction and trace-annihilating by form.
    """

    channel: str
    jump_ops: list
    rates: list
    layout: HilbertLayout
    active_strokes: tuple[str, ...]
    _l_ldag: list = field(init=False, repr=False)

    def __post_init__(self):
        self._l_ldag = [op.conj().T @ op for op in self.jump_ops]

    def apply(self, rho: np.ndarray) -> np.ndarray:
        out = np.zeros_like(rho)
        for rate, op, ldl in zip(self.rates, self.jump_ops, self._l_ldag):
            out += rate * (op @ rho @ op.conj().T - 0.5 * (ldl @ rho + rho @ ldl))
        return out

    def superoperator(self) -> np.ndarray:
        """Dense matrix acting on row-major vec(rho)."""
        d = self.layout.dim
        ident = np.eye(d, dtype=np.complex128)
        s = np.zeros((d * d, d * d), dtype=np.complex128)
        for rate, op, ldl in zip(self.rates, self.jump_ops, self._l_ldag):
            s += rate * (
                np.kron(op, op.conj())
                - 0.5 * np.kron(ldl, ident)
                - 0.5 * np.kron(ident, ldl.T)
            )
        return s


def _embed(op: np.ndarray, layout: HilbertLayout, factor: int) -> np.ndarray:
    full = np.array([[1.0 + 0j]])
    for k, d in enumerate(layout.factors):
        full = np.kron(full, op if k == factor else np.eye(d))
    return full


def build_liouvillian(channel: str, params, layout: HilbertLayout,
                      basis=None, stroke: str | None = None,
                      factor: int | None = None) -> Liouvillian:
    """Construct a named dissipative channel embedded in ``layout``.

    Thermal channels ("hot"/"cold") require the instantaneous eigenbasis of
    their stroke, are only valid on that stroke, and act on the qubit factor.
    The oscillator channel ("osc") is basis-independent and acts on the damped
    mode.
    """
    if channel in ("hot", "cold"):
        if stroke is not None and stroke != channel:
            raise ModelError(f"thermal channel '{channel}' requested during stroke '{stroke}'")
        if basis is None:
            raise ModelError(f"thermal channel '{channel}' needs the stroke eigenbasis")
        ground, excited = basis
        sp = np.outer(excited, ground.conj())
        fac = 0 if factor is None else factor
        sp_full = _embed(sp, layout, fac)
        return Liouvillian(
            channel=channel,
            jump_ops=[sp_full, sp_full.conj().T],
            rates=[params.gamma * params.n, params.gamma * (params.n + 1.0)],
            layout=layout,
            active_strokes=(channel,),
        )
    if channel == "osc":
        fac = len(layout.factors) - 1 if factor is None else factor
        b = _embed(annihilation(layout.factors[fac]), layout, fac)
        n_osc = params.n_osc
        return Liouvillian(
            channel="osc",
            jump_ops=[b, b.conj().T],
            rates=[params.gamma * (1.0 + n_osc), params.gamma * n_osc],
            layout=layout,
            active_strokes=("compression", "hot", "expansion", "cold"),
        )
    raise ModelError(f"unknown channel '{channel}'")


def dampf_hamiltonian(t: float, profile: DriveProfile, deph: DephasingBathParams,
                      n_max: int) -> Operator:
    """Composite Hamiltonian H_S(t) + Gamma sz(t) (b + b^dag) + omega0 b^dag b."""
    n_levels = n_max + 1
    layout = HilbertLayout((2, n_levels))
    omega, Omega = profile.omega, rabi(t, profile)
    eps = gap(omega, Omega)
    sz = sigma_z_at(omega, Omega)
    b = annihilation(n_levels)
    x = b + b.conj().T
    nhat = b.conj().T @ b
    h = (
        0.5 * eps * np.kron(sz, np.eye(n_levels))
        + deph.Gamma * np.kron(sz, x)
        + deph.omega0 * np.kron(np.eye(2), nhat)
    )
    return Operator(layout, h)

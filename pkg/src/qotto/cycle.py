"""Otto-cycle driver: stroke sequencing, steady-cycle detection, and
work/heat/power/efficiency accounting in "system-only" and "total" modes.

Sign conventions: positive work is done on the work medium, positive heat
flows into it; the extracted work per cycle is
W_ext = -(W_com + W_exp) in either accounting mode.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import EngineConfig
from .kernels import CUM_DE_OSC
from .propagate import (EnergyLedger, EngineModel, NumericsError, PropagatorState,
                        STROKES, evolve_stroke)


@dataclass
class CycleRecord:
    """Per-cycle energy accounting in both modes, plus the sampled ledger."""

    w_com_sys: float
    w_exp_sys: float
    q_h_sys: float
    q_c_sys: float
    w_com_tot: float
    w_exp_tot: float
    q_h_tot: float
    q_c_tot: float
    q_h_diss: float
    q_c_diss: float
    tau_cycle: float
    ledger: EnergyLedger
    endpoint_states: list | None = None
    cycles_to_steady: int = 0

    @property
    def w_ext_sys(self) -> float:
        return -(self.w_com_sys + self.w_exp_sys)

    @property
    def w_ext_tot(self) -> float:
        return -(self.w_com_tot + self.w_exp_tot)

    @property
    def p_sys(self) -> float:
        return self.w_ext_sys / self.tau_cycle

    @property
    def p_tot(self) -> float:
        return self.w_ext_tot / self.tau_cycle

    @property
    def eta_sys(self) -> float:
        return self.w_ext_sys / self.q_h_sys

    @property
    def eta_tot(self) -> float:
        return self.w_ext_tot / self.q_h_tot

    def first_law_residual(self) -> float:
        """Energy change of the extended medium minus all work and heat inputs.

        The extended energy is <H_D> - cumulative dE_osc (the oscillator-channel
        energy already counted as stored in the dephasing environment); the
        residual vanishes identically, so W_ext^tot = Q_h^tot + Q_c^tot holds at
        steady state where the energy change over a cycle is zero."""
        s = self.ledger.samples()
        from .kernels import COL_DE_OSC, COL_H_INT, COL_H_OSC, COL_H_S

        u = (s[:, COL_H_S] + s[:, COL_H_INT] + s[:, COL_H_OSC] - s[:, COL_DE_OSC])
        return float((u[-1] - u[0]) - (self.w_com_tot + self.w_exp_tot)
                     - (self.q_h_tot + self.q_c_tot))

    def csv_row(self) -> dict:
        return {
            "w_com_sys": self.w_com_sys, "w_com_tot": self.w_com_tot,
            "w_exp_sys": self.w_exp_sys, "w_exp_tot": self.w_exp_tot,
            "q_h_sys": self.q_h_sys, "q_h_tot": self.q_h_tot,
            "q_c_sys": self.q_c_sys, "q_c_tot": self.q_c_tot,
            "w_ext_sys": self.w_ext_sys, "w_ext_tot": self.w_ext_tot,
            "p_sys": self.p_sys, "p_tot": self.p_tot,
            "eta_sys": self.eta_sys, "eta_tot": self.eta_tot,
            "q_h_diss": self.q_h_diss, "q_c_diss": self.q_c_diss,
            "cycles_to_steady": self.cycles_to_steady,
        }


CYCLE_CSV_COLUMNS = (
    "cycle", "w_com_sys", "w_com_tot", "w_exp_sys", "w_exp_tot",
    "q_h_sys", "q_h_tot", "q_c_sys", "q_c_tot", "w_ext_sys", "w_ext_tot",
    "p_sys", "p_tot", "eta_sys", "eta_tot", "q_h_diss", "q_c_diss",
    "cycles_to_steady",
)


def run_cycle(state: PropagatorState, config: EngineConfig | None = None,
              ledger: EnergyLedger | None = None, keep_states: bool = False,
              retain_samples: bool = False) -> tuple[PropagatorState, CycleRecord]:
    """Execute compression -> hot -> expansion -> cold from the cycle start P0.

    System-mode quantities come from reduced-system energies at the stroke
    endpoint snapshots; total-mode quantities add the interaction and mode
    energies and subtract the oscillator-channel ledger integral per stroke.
    """
    m = state.model
    if ledger is None:
        ledger = EnergyLedger()
    snapshots = [state.rho.copy()]
    mark0 = len(ledger.marks)
    for stroke, tau in m.stroke_schedule():
        evolve_stroke(state, stroke, ledger, tau, retain_states=retain_samples)
        snapshots.append(state.rho.copy())
    marks = ledger.marks[mark0:mark0 + 4]

    phi_h = m.basis_angle("hot")
    eps_h, eps_c = m.config.eps_hot, m.config.eps_cold

    def e_sys(rho, phi, eps):
        zexp, _, _ = m.lab_components(rho, phi)
        return 0.5 * eps * float(zexp)

    def e_tot(rho, phi, eps):
        return m.lab_energy(rho, phi, eps)

    def e_env(rho, phi, eps):
        return e_tot(rho, phi, eps) - e_sys(rho, phi, eps)

    r0, r1, r2, r3, r4 = snapshots
    de_osc = [ledger.stroke_de_osc(mk) for mk in marks]

    w_com_sys = e_sys(r1, phi_h, eps_h) - e_sys(r0, 0.0, eps_c)
    q_h_sys = e_sys(r2, phi_h, eps_h) - e_sys(r1, phi_h, eps_h)
    w_exp_sys = e_sys(r3, 0.0, eps_c) - e_sys(r2, phi_h, eps_h)
    q_c_sys = e_sys(r4, 0.0, eps_c) - e_sys(r3, 0.0, eps_c)

    w_com_tot = e_tot(r1, phi_h, eps_h) - e_tot(r0, 0.0, eps_c) - de_osc[0]
    q_h_tot = e_tot(r2, phi_h, eps_h) - e_tot(r1, phi_h, eps_h) - de_osc[1]
    w_exp_tot = e_tot(r3, 0.0, eps_c) - e_tot(r2, phi_h, eps_h) - de_osc[2]
    q_c_tot = e_tot(r4, 0.0, eps_c) - e_tot(r3, 0.0, eps_c) - de_osc[3]

    q_h_diss = e_env(r2, phi_h, eps_h) - e_env(r1, phi_h, eps_h) - de_osc[1]
    q_c_diss = e_env(r4, 0.0, eps_c) - e_env(r3, 0.0, eps_c) - de_osc[3]

    record = CycleRecord(
        w_com_sys=w_com_sys, w_exp_sys=w_exp_sys, q_h_sys=q_h_sys, q_c_sys=q_c_sys,
        w_com_tot=w_com_tot, w_exp_tot=w_exp_tot, q_h_tot=q_h_tot, q_c_tot=q_c_tot,
        q_h_diss=q_h_diss, q_c_diss=q_c_diss,
        tau_cycle=m.config.strokes.tau_cycle,
        ledger=ledger,
        endpoint_states=snapshots if keep_states else None,
    )
    return state, record


def dissipated_heat_measured(record: CycleRecord) -> tuple[float, float]:
    """Heat passed from each thermal bath into the dephasing environment during
    its stroke, read off the ledger (d<H_int> + d<H_osc> - dE_osc)."""
    return record.q_h_diss, record.q_c_diss


def run_to_steady_cycle(config: EngineConfig, keep_states: bool = False,
                        retain_samples: bool = False,
                        model: EngineModel | None = None):
    """Iterate cycles until consecutive cycle-start states coincide.

    Returns (steady start state, record of the converged cycle, cycles used).
    The criterion is the trace distance between cycle-start states falling
    below numerics.cycle_tol; non-convergence raises with the distance series.
    """
    m = model if model is not None else EngineModel(config)
    state = PropagatorState(m, m.initial_state(), 0.0)
    distances = []
    prev_warned = False
    for cycle_index in range(1, config.numerics.max_cycles + 1):
        start = state.rho.copy()
        state, record = run_cycle(state, config, keep_states=keep_states,
                                  retain_samples=retain_samples)
        d = _blocks_trace_distance(m, start, state.rho)
        distances.append(d)
        if len(distances) >= 3 and distances[-1] > distances[-2] and not prev_warned:
            warnings.warn(
                f"cycle-distance sequence not monotone: {distances[-2]:.3e} -> "
                f"{distances[-1]:.3e} at cycle {cycle_index}", stacklevel=2)
            prev_warned = True
        if d < config.numerics.cycle_tol:
            record.cycles_to_steady = cycle_index
            return state, record, cycle_index
    raise NumericsError(
        f"no steady cycle within {config.numerics.max_cycles} cycles at "
        f"cycle_tol={config.numerics.cycle_tol:g}; distances: "
        + ", ".join(f"{d:.3e}" for d in distances)
    )


def _blocks_trace_distance(m: EngineModel, a: np.ndarray, b: np.ndarray) -> float:
    diff = m.as_matrix(a) - m.as_matrix(b)
    diff = 0.5 * (diff + diff.conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))

"""Power maximization over the four stroke durations, plus sweep drivers.

The search is a deterministic pattern search on a fixed duration grid
(default granularity 1/32, matching the resolution at which optimal stroke
durations are reported): evaluate the steady-cycle power at +/- one grid step
per coordinate, move to the best improving neighbor, halt when no neighbor
improves.  The result is a grid-local maximum, i.e. a lower bound on the
global maximum.  An optional continuous Nelder-Mead refinement can be chained
behind a flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import (dissipated_heat_bounds, effective_dephasing_rate,
                       scaling_constant_efficiency, scaling_constant_power,
                       steady_displacement, conditional_oscillator_analysis)
from .config import EngineConfig, StrokeDurations
from .cycle import CycleRecord, run_to_steady_cycle
from .propagate import NumericsError


@dataclass(frozen=True)
class OptimizationSpec:
    target: str = "tot"                     # "sys" or "tot"
    initial: tuple = (0.78125, 1.84375, 0.6875, 2.625)
    grid: float = 1.0 / 32.0
    bounds: tuple = ((1 / 32, 8.0),) * 4
    max_evaluations: int = 400
    seed: int = 0
    refine: bool = False                    # optional Nelder-Mead polish

    def __post_init__(self):
        if self.target not in ("sys", "tot"):
            raise ValueError("target must be 'sys' or 'tot'")
        if self.grid <= 0:
            raise ValueError("grid granularity must be positive")
        if any(lo <= 0 or hi <= lo for lo, hi in self.bounds):
            raise ValueError("bounds must be positive and ordered")


@dataclass
class OptimizationResult:
    durations: tuple
    record: CycleRecord
    trace: list
    evaluations: int
    budget_exhausted: bool = False

    @property
    def power(self) -> float:
        return self.record.p_tot if self._target == "tot" else self.record.p_sys

    _target: str = "tot"


class _Evaluator:
    """Steady-cycle evaluation cache keyed by grid-snapped durations."""

    def __init__(self, config: EngineConfig, grid: float):
        self.config = config
        self.grid = grid
        self.cache: dict[tuple, CycleRecord] = {}
        self.failures: dict[tuple, str] = {}

    def key(self, durations) -> tuple:
        return tuple(int(round(d / self.grid)) for d in durations)

    def durations(self, key) -> tuple:
        return tuple(k * self.grid for k in key)

    def record(self, key) -> CycleRecord | None:
        if key in self.failures:
            return None
        if key not in self.cache:
            cfg = self.config.with_strokes(StrokeDurations(*self.durations(key)))
            try:
                _, rec, _ = run_to_steady_cycle(cfg)
            except NumericsError as exc:
                self.failures[key] = str(exc)
                return None
            self.cache[key] = rec
        return self.cache[key]

    def power(self, key, target: str) -> float:
        rec = self.record(key)
        if rec is None:
            return -math.inf
        return rec.p_tot if target == "tot" else rec.p_sys


def maximize_power(spec: OptimizationSpec, config: EngineConfig,
                   evaluator: _Evaluator | None = None) -> OptimizationResult:
    """Deterministic grid pattern search for the maximum steady-cycle power."""
    ev = evaluator if evaluator is not None else _Evaluator(config, spec.grid)
    rng = np.random.default_rng(spec.seed)
    lo_keys = [int(math.ceil(b[0] / spec.grid - 1e-9)) for b in spec.bounds]
    hi_keys = [int(math.floor(b[1] / spec.grid + 1e-9)) for b in spec.bounds]
    current = tuple(min(max(k, lo), hi) for k, lo, hi
                    in zip(ev.key(spec.initial), lo_keys, hi_keys))
    trace = []
    evaluations = 0
    budget_exhausted = False

    def eval_key(key):
        nonlocal evaluations
        fresh = key not in ev.cache and key not in ev.failures
        p = ev.power(key, spec.target)
        if fresh:
            evaluations += 1
        trace.append((ev.durations(key), p))
        return p

    best_p = eval_key(current)
    if not math.isfinite(best_p):
        raise NumericsError("steady-cycle evaluation failed at the initial durations")
    while True:
        neighbors = []
        for i in range(4):
            for step in (+1, -1):
                cand = list(current)
                cand[i] += step
                if lo_keys[i] <= cand[i] <= hi_keys[i]:
                    neighbors.append(tuple(cand))
        if evaluations + len(neighbors) > spec.max_evaluations:
            budget_exhausted = True
            break
        powers = [eval_key(k) for k in neighbors]
        best_idx = None
        for i, p in enumerate(powers):
            if p > best_p + 1e-15:
                if best_idx is None or p > powers[best_idx]:
                    best_idx = i
                elif p == powers[best_idx]:
                    # exact tie: deterministic choice driven by the seed
                    best_idx = int(rng.choice([best_idx, i]))
        if best_idx is None:
            break
        current = neighbors[best_idx]
        best_p = powers[best_idx]

    result = OptimizationResult(
        durations=ev.durations(current),
        record=ev.record(current),
        trace=trace,
        evaluations=evaluations,
        budget_exhausted=budget_exhausted,
    )
    result._target = spec.target
    if spec.refine and not budget_exhausted:
        result = _refine_nelder_mead(spec, config, result)
    return result


def _refine_nelder_mead(spec: OptimizationSpec, config: EngineConfig,
                        seed_result: OptimizationResult) -> OptimizationResult:
    """Small continuous simplex polish around the grid optimum (off by default)."""
    import scipy.optimize

    def neg_power(x):
        if np.any(x <= 0):
            return math.inf
        try:
            _, rec, _ = run_to_steady_cycle(config.with_strokes(StrokeDurations(*x)))
        except NumericsError:
            return math.inf
        return -(rec.p_tot if spec.target == "tot" else rec.p_sys)

    x0 = np.array(seed_result.durations)
    res = scipy.optimize.minimize(neg_power, x0, method="Nelder-Mead",
                                  options={"maxfev": 60, "xatol": spec.grid / 8,
                                           "fatol": 1e-12})
    if -res.fun > seed_result.power:
        _, rec, _ = run_to_steady_cycle(config.with_strokes(StrokeDurations(*res.x)))
        out = OptimizationResult(tuple(res.x), rec, seed_result.trace,
                                 seed_result.evaluations + res.nfev)
        out._target = spec.target
        return out
    return seed_result


def verify_grid_local_maximum(spec: OptimizationSpec, config: EngineConfig,
                              durations) -> bool:
    """Re-check that all in-bounds grid neighbors have lower power."""
    ev = _Evaluator(config, spec.grid)
    key = ev.key(durations)
    p0 = ev.power(key, spec.target)
    for i in range(4):
        for step in (+1, -1):
            cand = list(key)
            cand[i] += step
            d = ev.durations(tuple(cand))
            if not (spec.bounds[i][0] - 1e-12 <= d[i] <= spec.bounds[i][1] + 1e-12):
                continue
            if ev.power(tuple(cand), spec.target) > p0 + 1e-15:
                return False
    return True


# ---------------------------------------------------------------------------
# Sweep drivers


def sweep_dephasing(config: EngineConfig, gammas: list, spec: OptimizationSpec | None = None):
    """Optimize the cycle at each coupling strength; rows sorted by the
    effective dephasing rate.

    Each point runs two pattern searches (targets P_sys and P_tot) over a
    shared evaluation cache; eta/tau/W_ext columns come from the P_tot optimum.
    """
    spec = spec or OptimizationSpec()
    rows = []
    for g in gammas:
        cfg = _with_coupling(config, g)
        if cfg.dephasing is None:
            geff = 0.0
        else:
            d = cfg.dephasing
            geff = effective_dephasing_rate(d.Gamma, d.gamma, d.omega0, d.beta)
        row = {"Gamma": g, "Gamma_eff": geff, "status": "ok"}
        try:
            ev = _Evaluator(cfg, spec.grid)
            res_sys = maximize_power(replace(spec, target="sys"), cfg, evaluator=ev)
            res_tot = maximize_power(replace(spec, target="tot"), cfg, evaluator=ev)
            rec = res_tot.record
            row.update({
                "p_max_sys": res_sys.record.p_sys,
                "p_max_tot": rec.p_tot,
                "eta_sys": rec.eta_sys,
                "eta_tot": rec.eta_tot,
                "tau_cycle": sum(res_tot.durations),
                "w_ext_tot": rec.w_ext_tot,
                "tau_com": res_tot.durations[0], "tau_h": res_tot.durations[1],
                "tau_exp": res_tot.durations[2], "tau_c": res_tot.durations[3],
                "evaluations": res_sys.evaluations + res_tot.evaluations,
            })
        except NumericsError as exc:
            row["status"] = f"failed: {exc}"
        rows.append(row)
    rows.sort(key=lambda r: r["Gamma_eff"])
    return rows


def _with_coupling(config: EngineConfig, Gamma: float) -> EngineConfig:
    if Gamma == 0.0:
        return replace(config, dephasing=None)
    if config.dephasing is None:
        raise ValueError("base config has no dephasing bath to rescale")
    return replace(config, dephasing=replace(config.dephasing, Gamma=Gamma))


def sweep_gamma_to_gamma0(config: EngineConfig, gammas: list):
    """Vary the mode damping toward its maximum at fixed coupling and fixed
    durations, keeping the effective dephasing rate constant via the matching
    mode frequency; tabulates power, dissipated heat and bounds per point."""
    if config.dephasing is None:
        raise ValueError("sweep needs a dephasing bath")
    d0 = config.dephasing
    rows = []
    for g in gammas:
        try:
            omega0, g0 = scaling_constant_power(d0.gamma, d0.omega0, g)
            if omega0 <= 0:
                raise NumericsError("omega0(gamma) vanishes at gamma_0")
            cfg = replace(config, dephasing=replace(d0, gamma=g, omega0=omega0))
            _, rec, cycles = run_to_steady_cycle(cfg)
            bounds = dissipated_heat_bounds(
                d0.Gamma, g, omega0, d0.beta, config.hot.gamma,
                config.strokes.tau_h, config.hot.n, config.hot.n, config.cold.n)
            rows.append({
                "gamma": g, "omega0": omega0, "gamma0": g0,
                "Gamma_eff": effective_dephasing_rate(d0.Gamma, g, omega0, d0.beta),
                "p_tot": rec.p_tot, "q_h_diss": rec.q_h_diss,
                "bound_lower": bounds.lower, "bound_upper": bounds.upper,
                "eta_tot": rec.eta_tot, "eta_sys": rec.eta_sys,
                "cycles": cycles, "status": "ok",
            })
        except NumericsError as exc:
            rows.append({"gamma": g, "status": f"failed: {exc}"})
    return rows


def lambda_scan(config: EngineConfig, lams: list, ansatz_samples: bool = True):
    """Speed-up scan: rescale the engine by each factor and run the steady cycle
    at fixed (scaled) durations; also reports the distance to the product-state
    approximation over the cycle."""
    rows = []
    for lam in lams:
        try:
            cfg = scaling_constant_efficiency(config, lam) if lam != 1.0 else config
            _, rec, cycles = run_to_steady_cycle(cfg, retain_samples=ansatz_samples)
            row = {
                "lambda": lam, "p_tot": rec.p_tot, "w_ext_tot": rec.w_ext_tot,
                "eta_tot": rec.eta_tot, "eta_sys": rec.eta_sys,
                "tau_cycle": cfg.strokes.tau_cycle, "cycles": cycles,
                "status": "ok",
            }
            if ansatz_samples:
                row["ansatz_distance"] = max_ansatz_distance(cfg, rec)
            rows.append(row)
        except NumericsError as exc:
            rows.append({"lambda": lam, "status": f"failed: {exc}"})
    return rows


def max_ansatz_distance(config: EngineConfig, record: CycleRecord) -> float:
    """Max trace distance over retained cycle samples between the simulated state
    and the product approximation with the measured populations and the
    closed-form displacement."""
    from .analysis import AnsatzState
    from .model import rabi
    from .propagate import EngineModel
    from .kernels import COL_T, COL_P_E

    if not record.ledger.states:
        raise ValueError("record retains no sampled states")
    d = config.dephasing
    alpha = steady_displacement(d.Gamma, d.gamma, d.omega0)
    m = EngineModel(config)
    s = record.ledger.samples()
    worst = 0.0
    t_start = s[record.ledger.state_rows[0], COL_T] if record.ledger.state_rows else 0.0
    for rho, irow in zip(record.ledger.states, record.ledger.state_rows):
        t = s[irow, COL_T]
        p_e = min(max(s[irow, COL_P_E], 0.0), 1.0)
        om = rabi((t - 0.0) % config.strokes.tau_cycle, config.drive)
        ans = AnsatzState(p_e, alpha, config.omega, om).materialize(m.n_max)
        diff = m.as_matrix(rho) - m.as_matrix(ans)
        diff = 0.5 * (diff + diff.conj().T)
        dist = 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))
        worst = max(worst, dist)
    return worst

"""Command-line interface: presets, experiment commands, machine-readable outputs.

Exit codes: 0 success, 1 numerics failure, 2 configuration error.  Every
command writes a JSON manifest listing the resolved configuration, its hash,
and sha256 digests of all output files; ``--verify`` re-checks the digests.
Floats in CSV outputs are printed with 12 significant digits so identical
configurations produce byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, EngineConfig, PRESET_NAMES, config_from_flat,
                     config_hash, config_to_flat, dump_config, load_config,
                     parse_config_text, preset)
from .propagate import NumericsError

FLOAT_FMT = "%.12g"


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % value
    if isinstance(value, complex):
        return f"{FLOAT_FMT % value.real}{'+' if value.imag >= 0 else '-'}{FLOAT_FMT % abs(value.imag)}j"
    return str(value)


def write_csv(path: Path, header, rows, comment: str | None = None) -> None:
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append(",".join(header))
    for row in rows:
        if isinstance(row, dict):
            lines.append(",".join(_fmt(row.get(col, "")) for col in header))
        else:
            lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Manifest:
    def __init__(self, command: str, config: EngineConfig | None, outdir: Path):
        self.command = command
        self.config = config
        self.outdir = outdir
        self.outputs: dict[str, Path] = {}
        self.extra: dict = {}
        self.t0 = time.time()

    def add(self, name: str, path: Path) -> None:
        self.outputs[name] = path

    def write(self) -> Path:
        doc = {
            "command": self.command,
            "tool_version": __version__,
            "wall_clock_s": round(time.time() - self.t0, 3),
            "outputs": {
                name: {"path": str(p), "sha256": _sha256(p), "bytes": p.stat().st_size}
                for name, p in self.outputs.items()
            },
        }
        if self.config is not None:
            doc["config"] = config_to_flat(self.config)
            doc["config_hash"] = config_hash(self.config)
        doc.update(self.extra)
        path = self.outdir / f"{self.command}.manifest.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        return path


def verify_manifest(path: Path) -> list[str]:
    doc = json.loads(path.read_text())
    problems = []
    for name, entry in doc.get("outputs", {}).items():
        p = Path(entry["path"])
        if not p.exists():
            problems.append(f"{name}: missing file {p}")
        elif _sha256(p) != entry["sha256"]:
            problems.append(f"{name}: sha256 mismatch for {p}")
    return problems


# ---------------------------------------------------------------------------
# Config resolution shared by all commands


def resolve_config(args) -> EngineConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        raise ConfigError("either --preset or --config is required")
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got '{item}'")
        k, _, v = item.partition("=")
        overrides[k.strip()] = v.strip()
    if overrides:
        flat = {k: _fmt(v) for k, v in config_to_flat(cfg).items()}
        flat.update(overrides)
        cfg = config_from_flat(flat)
    return cfg


def _outdir(args) -> Path:
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands


def cmd_run_cycle(args) -> int:
    from .cycle import CYCLE_CSV_COLUMNS, run_to_steady_cycle
    from .propagate import TRAJECTORY_HEADER

    cfg = resolve_config(args)
    out = _outdir(args)
    man = Manifest("run-cycle", cfg, out)
    _, record, cycles = run_to_steady_cycle(cfg)
    row = record.csv_row()
    row["cycle"] = cycles
    report = out / "cycle_report.csv"
    write_csv(report, CYCLE_CSV_COLUMNS, [row])
    man.add("cycle_report", report)
    traj = out / "trajectory.csv"
    write_csv(traj, TRAJECTORY_HEADER, record.ledger.trajectory_columns())
    man.add("trajectory", traj)
    man.extra["cycles_to_steady"] = cycles
    manifest = man.write()
    print(f"steady cycle after {cycles} cycles; eta_sys={record.eta_sys:.6g} "
          f"eta_tot={record.eta_tot:.6g} P_tot={record.p_tot:.6g}")
    print(f"wrote {report}, {traj}, {manifest}")
    return 0


def cmd_optimize(args) -> int:
    from .optimizer import OptimizationSpec, maximize_power

    cfg = resolve_config(args)
    out = _outdir(args)
    man = Manifest("optimize", cfg, out)
    spec = OptimizationSpec(target=args.target, grid=args.grid,
                            max_evaluations=args.budget, refine=args.refine)
    res = maximize_power(spec, cfg)
    rows = [{
        "tau_com": res.durations[0], "tau_h": res.durations[1],
        "tau_exp": res.durations[2], "tau_c": res.durations[3],
        "p_sys": res.record.p_sys, "p_tot": res.record.p_tot,
        "eta_sys": res.record.eta_sys, "eta_tot": res.record.eta_tot,
        "w_ext_tot": res.record.w_ext_tot, "evaluations": res.evaluations,
        "budget_exhausted": res.budget_exhausted,
    }]
    path = out / "optimum.csv"
    write_csv(path, list(rows[0].keys()), rows)
    man.add("optimum", path)
    man.extra["grid"] = spec.grid
    man.extra["budget"] = spec.max_evaluations
    man.write()
    print(f"optimum durations {tuple(round(d, 6) for d in res.durations)} "
          f"P_{args.target}={res.power:.6g} ({res.evaluations} evaluations)")
    return 0


def cmd_sweep(args) -> int:
    from .optimizer import OptimizationSpec, sweep_dephasing

    cfg = resolve_config(args)
    out = _outdir(args)
    man = Manifest("sweep", cfg, out)
    gammas = [float(g) for g in args.couplings.split(",")]
    spec = OptimizationSpec(target=args.target, grid=args.grid,
                            max_evaluations=args.budget)
    rows = sweep_dephasing(cfg, gammas, spec)
    header = ["Gamma", "Gamma_eff", "p_max_sys", "p_max_tot", "eta_sys", "eta_tot",
              "tau_cycle", "w_ext_tot", "tau_com", "tau_h", "tau_exp", "tau_c",
              "evaluations", "status"]
    path = out / "dephasing_sweep.csv"
    write_csv(path, header, rows)
    man.add("sweep", path)
    man.write()
    print(f"wrote {path} ({len(rows)} points)")
    return 0


def cmd_scaling(args) -> int:
    from .optimizer import lambda_scan, sweep_gamma_to_gamma0

    cfg = resolve_config(args)
    out = _outdir(args)
    man = Manifest("scaling", cfg, out)
    wrote = []
    if args.gammas:
        gammas = [float(g) for g in args.gammas.split(",")]
        rows = sweep_gamma_to_gamma0(cfg, gammas)
        header = ["gamma", "omega0", "gamma0", "Gamma_eff", "p_tot", "q_h_diss",
                  "bound_lower", "bound_upper", "eta_tot", "eta_sys", "cycles",
                  "status"]
        path = out / "gamma_sweep.csv"
        write_csv(path, header, rows)
        man.add("gamma_sweep", path)
        wrote.append(path)
    if args.lambdas:
        lams = [float(v) for v in args.lambdas.split(",")]
        rows = lambda_scan(cfg, lams)
        header = ["lambda", "p_tot", "w_ext_tot", "eta_tot", "eta_sys", "tau_cycle",
                  "cycles", "ansatz_distance", "status"]
        path = out / "lambda_scan.csv"
        write_csv(path, header, rows)
        man.add("lambda_scan", path)
        wrote.append(path)
    if not wrote:
        raise ConfigError("scaling needs --gammas and/or --lambdas")
    man.write()
    print("wrote " + ", ".join(str(p) for p in wrote))
    return 0


def cmd_validate_tedopa(args) -> int:
    from .tedopa import chain_coefficients, compare_dampf_tedopa
    from .model import lorentzian_sd

    cfg = resolve_config(args)
    if cfg.dephasing is None:
        raise ConfigError("validate-tedopa needs a dephasing bath in the config")
    out = _outdir(args)
    man = Manifest("validate-tedopa", cfg, out)
    supports = [float(s) for s in args.supports.split(",")]
    rows = compare_dampf_tedopa(cfg, supports, duration=args.duration)
    header = ["a", "N", "c0", "d_h_int", "d_e_bath", "h_int_plateau",
              "reflection_time", "reflection_flag", "max_top_occupation", "status"]
    path = out / "tedopa_comparison.csv"
    write_csv(path, header, rows)
    man.add("comparison", path)
    for a in supports:
        deph = cfg.dephasing
        coeffs = chain_coefficients(lambda w: lorentzian_sd(w, deph), deph.omega0,
                                    a, cfg.tedopa.N)
        cpath = out / f"chain_coefficients_a{_fmt(a)}.csv"
        rows_c = [(n, coeffs.omega_n[n], coeffs.t_n[n] if n < coeffs.N - 1 else "")
                  for n in range(coeffs.N)]
        write_csv(cpath, ("n", "omega_n", "t_n"), rows_c,
                  comment=f"a={_fmt(a)} N={coeffs.N} c0={_fmt(coeffs.c0)}")
        man.add(f"chain_a{_fmt(a)}", cpath)
    man.write()
    print(f"wrote {path}")
    return 0


def cmd_bounds(args) -> int:
    from .analysis import (decoupling_energy_formula, derived_temperatures,
                           dissipated_heat_bounds, effective_dephasing_rate,
                           gamma_max, polarization_arg_from_n, quasistatic,
                           recoupling_bound, scaling_constant_power,
                           steady_displacement)
    from .model import DephasingBathParams, thermalized_sd

    out = _outdir(args)
    man = Manifest("bounds", None, out)
    G, g, w0, beta = args.Gamma, args.gamma, args.omega0, args.beta
    n_h, n_c = args.n_hot, args.n_cold
    eps_c, eps_h = args.eps_cold, args.eps_hot
    doc = {"Gamma": G, "gamma": g, "omega0": w0, "beta": beta}
    if G > 0:
        deph = DephasingBathParams(G, g, w0, beta if beta > 0 else math.inf)
        alpha = steady_displacement(G, g, w0)
        doc.update({
            "gamma_eff": effective_dephasing_rate(G, g, w0),
            "gamma_eff_beta": effective_dephasing_rate(G, g, w0, deph.beta),
            "alpha_re": alpha.real, "alpha_im": alpha.imag,
            "delta_e_dec": decoupling_energy_formula(G, g, w0),
            "recoupling_bound_tau_h": recoupling_bound(
                lambda w: thermalized_sd(w, deph), args.tau_h),
        })
    else:
        doc.update({"gamma_eff": 0.0, "gamma_eff_beta": 0.0, "alpha_re": 0.0,
                    "alpha_im": 0.0, "delta_e_dec": 0.0,
                    "recoupling_bound_tau_h": 0.0})
    hb = dissipated_heat_bounds(G, g, w0, beta if beta > 0 else math.inf,
                                args.gamma_th, args.tau_h, n_h, n_h, n_c)
    doc["q_h_diss_lower"] = hb.lower
    doc["q_h_diss_upper"] = hb.upper
    g0 = gamma_max(g, w0)
    doc["gamma0"] = g0
    doc["omega0_of_gamma"] = scaling_constant_power(g, w0, min(args.gamma_eval, g0))[0] \
        if args.gamma_eval else w0
    doc["quasistatic"] = quasistatic(eps_c, eps_h, polarization_arg_from_n(n_c),
                                     polarization_arg_from_n(n_h))
    doc["reference_efficiencies"] = derived_temperatures(n_h, n_c, eps_h, eps_c)
    path = out / "bounds.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    man.add("bounds", path)
    man.write()
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_verify(args) -> int:
    problems = []
    for mpath in args.manifests:
        problems += [f"{mpath}: {p}" for p in verify_manifest(Path(mpath))]
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return 1
    print(f"verified {len(args.manifests)} manifest(s)")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qotto",
        description="Two-level quantum Otto engine with a damped-mode dephasing "
                    "environment: simulation, optimization, and closed-form analysis.")
    parser.add_argument("--version", action="version", version=f"qotto {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def add_config_args(p):
        p.add_argument("--preset", choices=PRESET_NAMES, help="built-in configuration")
        p.add_argument("--config", help="flat key-value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a single configuration key")
        p.add_argument("--outdir", default="out", help="output directory")

    p = sub.add_parser("run-cycle", help="run to the steady cycle; write report + trajectory")
    add_config_args(p)
    p.set_defaults(fn=cmd_run_cycle)

    p = sub.add_parser("optimize", help="maximize power over the stroke durations")
    add_config_args(p)
    p.add_argument("--target", choices=("sys", "tot"), default="tot")
    p.add_argument("--grid", type=float, default=1 / 32)
    p.add_argument("--budget", type=int, default=400)
    p.add_argument("--refine", action="store_true", help="Nelder-Mead polish")
    p.set_defaults(fn=cmd_optimize)

    p = sub.add_parser("sweep", help="optimize at several dephasing couplings")
    add_config_args(p)
    p.add_argument("--couplings", required=True,
                   help="comma-separated couplings (0 = no dephasing bath)")
    p.add_argument("--target", choices=("sys", "tot"), default="tot")
    p.add_argument("--grid", type=float, default=1 / 32)
    p.add_argument("--budget", type=int, default=400)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("scaling", help="constant-rate damping sweep and speed-up scan")
    add_config_args(p)
    p.add_argument("--gammas", help="comma-separated damping rates toward gamma_0")
    p.add_argument("--lambdas", help="comma-separated speed-up factors")
    p.set_defaults(fn=cmd_scaling)

    p = sub.add_parser("validate-tedopa", help="chain-mapping cross-check of the ledger")
    add_config_args(p)
    p.add_argument("--supports", default="4,8,16",
                   help="comma-separated support half-widths")
    p.add_argument("--duration", type=float, default=None,
                   help="simulated horizon (default: one full cycle)")
    p.set_defaults(fn=cmd_validate_tedopa)

    p = sub.add_parser("bounds", help="closed-form quantities as JSON")
    p.add_argument("--Gamma", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--omega0", type=float, required=True)
    p.add_argument("--beta", type=float, default=0.0, help="0 means infinite")
    p.add_argument("--gamma-th", dest="gamma_th", type=float, default=0.5)
    p.add_argument("--tau-h", dest="tau_h", type=float, default=1.84375)
    p.add_argument("--n-hot", dest="n_hot", type=float, default=0.4857)
    p.add_argument("--n-cold", dest="n_cold", type=float, default=0.0524)
    p.add_argument("--eps-hot", dest="eps_hot", type=float, default=math.hypot(1.0, 0.5))
    p.add_argument("--eps-cold", dest="eps_cold", type=float, default=1.0)
    p.add_argument("--gamma-eval", dest="gamma_eval", type=float, default=0.0,
                   help="evaluate omega0(gamma) at this damping")
    p.add_argument("--outdir", default="out")
    p.set_defaults(fn=cmd_bounds)

    p = sub.add_parser("verify", help="re-check output digests against manifests")
    p.add_argument("manifests", nargs="+")
    p.set_defaults(fn=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerics failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

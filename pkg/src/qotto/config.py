"""Engine configuration: dataclasses, presets, and the flat key-value file format.

Config files are diffable flat text: one ``dotted.key = value`` per line,
``#`` comments allowed.  The full key set is fixed (see ``CONFIG_KEYS``);
unknown keys and missing keys are reported exhaustively, not first-failure.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

from .model import DephasingBathParams, DriveProfile, ThermalBathParams, gap


class ConfigError(ValueError):
    """Invalid or incomplete configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class StrokeDurations:
    tau_com: float
    tau_h: float
    tau_exp: float
    tau_c: float

    def __post_init__(self):
        if min(self.tau_com, self.tau_h, self.tau_exp, self.tau_c) <= 0:
            raise ConfigError(f"all stroke durations must be > 0, got {self}")

    @property
    def tau_cycle(self) -> float:
        return self.tau_com + self.tau_h + self.tau_exp + self.tau_c

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.tau_com, self.tau_h, self.tau_exp, self.tau_c)


@dataclass(frozen=True)
class Numerics:
    dt: float | None = None          # None -> 0.02 / max(eps_max, omega0, Gamma, gamma)
    n_max: int | None = None         # None -> from the steady displacement + margin
    cycle_tol: float = 1e-6
    max_cycles: int = 20
    samples_per_stroke: int = 64
    stability_bound: float = 0.05    # required: dt * max rate <= this
    positivity_abort: float = 1e-6   # runs abort when min eig drops below -this


@dataclass(frozen=True)
class TedopaParams:
    a: float = 16.0
    N: int = 5
    local_dim: int = 3


@dataclass(frozen=True)
class EngineConfig:
    """All physical and numerical parameters of one engine setup."""

    omega: float = 1.0
    omega_rabi_max: float = 0.5
    hot: ThermalBathParams = field(default_factory=lambda: ThermalBathParams(0.4857, 0.5, "hot"))
    cold: ThermalBathParams = field(default_factory=lambda: ThermalBathParams(0.0524, 0.5, "cold"))
    dephasing: DephasingBathParams | None = None
    strokes: StrokeDurations = field(default_factory=lambda: StrokeDurations(1.0, 1.0, 1.0, 1.0))
    numerics: Numerics = field(default_factory=Numerics)
    tedopa: TedopaParams = field(default_factory=TedopaParams)

    @property
    def eps_cold(self) -> float:
        return gap(self.omega, 0.0)

    @property
    def eps_hot(self) -> float:
        return gap(self.omega, self.omega_rabi_max)

    @property
    def drive(self) -> DriveProfile:
        return DriveProfile(self.omega, self.omega_rabi_max, *self.strokes.as_tuple())

    def with_strokes(self, durations) -> "EngineConfig":
        if not isinstance(durations, StrokeDurations):
            durations = StrokeDurations(*durations)
        return replace(self, strokes=durations)

    def dt_default(self) -> float:
        rates = [self.eps_hot]
        if self.dephasing is not None and self.dephasing.Gamma > 0:
            rates += [self.dephasing.omega0, self.dephasing.Gamma, self.dephasing.gamma]
        return 0.02 / max(rates)

    def resolved_dt(self) -> float:
        dt = self.numerics.dt if self.numerics.dt is not None else self.dt_default()
        rates = [self.eps_hot]
        if self.dephasing is not None and self.dephasing.Gamma > 0:
            rates += [self.dephasing.omega0, self.dephasing.Gamma, self.dephasing.gamma]
        if dt * max(rates) > self.numerics.stability_bound * (1 + 1e-9):
            raise ConfigError(
                f"dt={dt:g} violates the stability bound: dt*max_rate="
                f"{dt * max(rates):.3g} > {self.numerics.stability_bound}"
            )
        return dt

    def resolved_n_max(self) -> int:
        """Oscillator cutoff: top coherent/thermal population < 1e-8, plus 4 margin."""
        if self.numerics.n_max is not None:
            return self.numerics.n_max
        deph = self.dephasing
        if deph is None or deph.Gamma == 0.0:
            return 0
        alpha = abs(
            2.0 * deph.Gamma * complex(2.0 * deph.omega0, deph.gamma)
            / (4.0 * deph.omega0**2 + deph.gamma**2)
        )
        n = 1
        while True:
            # Poisson tail of the displaced state at level n.
            log_p = 2 * n * math.log(alpha) - math.lgamma(n + 1) - alpha**2 if alpha > 0 else -math.inf
            thermal_ok = True
            if deph.n_osc > 0:
                r = deph.n_osc / (deph.n_osc + 1.0)
                thermal_ok = (n * math.log(r) - math.log(deph.n_osc + 1.0)) < math.log(1e-8)
            if log_p < math.log(1e-8) and thermal_ok:
                return n + 4
            n += 1
            if n > 512:
                raise ConfigError("could not find an oscillator cutoff below 512 levels")


# ---------------------------------------------------------------------------
# Flat key-value format

CONFIG_KEYS = (
    "engine.omega",
    "engine.omega_rabi_max",
    "bath.hot.n",
    "bath.hot.gamma",
    "bath.cold.n",
    "bath.cold.gamma",
    "dephasing.Gamma",
    "dephasing.gamma",
    "dephasing.omega0",
    "dephasing.beta",
    "strokes.tau_com",
    "strokes.tau_h",
    "strokes.tau_exp",
    "strokes.tau_c",
    "numerics.dt",
    "numerics.n_max",
    "numerics.cycle_tol",
    "numerics.max_cycles",
    "tedopa.a",
    "tedopa.N",
    "tedopa.local_dim",
)

_OPTIONAL_KEYS = {"numerics.dt", "numerics.n_max", "numerics.cycle_tol", "numerics.max_cycles",
                  "tedopa.a", "tedopa.N", "tedopa.local_dim", "dephasing.beta"}
_INT_KEYS = {"numerics.n_max", "numerics.max_cycles", "tedopa.N", "tedopa.local_dim"}


def config_to_flat(config: EngineConfig) -> dict[str, float]:
    deph = config.dephasing or DephasingBathParams(0.0, 1.0, 1.0)
    flat = {
        "engine.omega": config.omega,
        "engine.omega_rabi_max": config.omega_rabi_max,
        "bath.hot.n": config.hot.n,
        "bath.hot.gamma": config.hot.gamma,
        "bath.cold.n": config.cold.n,
        "bath.cold.gamma": config.cold.gamma,
        "dephasing.Gamma": deph.Gamma,
        "dephasing.gamma": deph.gamma,
        "dephasing.omega0": deph.omega0,
        "dephasing.beta": deph.beta,
        "strokes.tau_com": config.strokes.tau_com,
        "strokes.tau_h": config.strokes.tau_h,
        "strokes.tau_exp": config.strokes.tau_exp,
        "strokes.tau_c": config.strokes.tau_c,
        "numerics.cycle_tol": config.numerics.cycle_tol,
        "numerics.max_cycles": config.numerics.max_cycles,
        "tedopa.a": config.tedopa.a,
        "tedopa.N": config.tedopa.N,
        "tedopa.local_dim": config.tedopa.local_dim,
    }
    if config.numerics.dt is not None:
        flat["numerics.dt"] = config.numerics.dt
    if config.numerics.n_max is not None:
        flat["numerics.n_max"] = config.numerics.n_max
    return flat


def config_from_flat(flat: dict) -> EngineConfig:
    problems = []
    for key in flat:
        if key not in CONFIG_KEYS:
            problems.append(f"unknown key '{key}'")
    required = [k for k in CONFIG_KEYS if k not in _OPTIONAL_KEYS]
    for key in required:
        if key not in flat:
            problems.append(f"missing key '{key}'")
    values = {}
    for key, raw in flat.items():
        if key not in CONFIG_KEYS:
            continue
        try:
            values[key] = int(raw) if key in _INT_KEYS else float(raw)
        except (TypeError, ValueError):
            problems.append(f"key '{key}' has non-numeric value '{raw}'")
    if problems:
        raise ConfigError("; ".join(sorted(problems)))

    gamma_deph = values["dephasing.Gamma"]
    deph = None
    if gamma_deph > 0:
        deph = DephasingBathParams(
            Gamma=gamma_deph,
            gamma=values["dephasing.gamma"],
            omega0=values["dephasing.omega0"],
            beta=values.get("dephasing.beta", math.inf),
        )
    numerics = Numerics(
        dt=values.get("numerics.dt"),
        n_max=values.get("numerics.n_max"),
        cycle_tol=values.get("numerics.cycle_tol", 1e-6),
        max_cycles=int(values.get("numerics.max_cycles", 20)),
    )
    tedopa = TedopaParams(
        a=values.get("tedopa.a", 16.0),
        N=int(values.get("tedopa.N", 5)),
        local_dim=int(values.get("tedopa.local_dim", 3)),
    )
    return EngineConfig(
        omega=values["engine.omega"],
        omega_rabi_max=values["engine.omega_rabi_max"],
        hot=ThermalBathParams(values["bath.hot.n"], values["bath.hot.gamma"], "hot"),
        cold=ThermalBathParams(values["bath.cold.n"], values["bath.cold.gamma"], "cold"),
        dephasing=deph,
        strokes=StrokeDurations(values["strokes.tau_com"], values["strokes.tau_h"],
                                values["strokes.tau_exp"], values["strokes.tau_c"]),
        numerics=numerics,
        tedopa=tedopa,
    )


def parse_config_text(text: str) -> dict[str, str]:
    flat = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{line}'")
        key, _, value = line.partition("=")
        flat[key.strip()] = value.strip()
    return flat


def load_config(path) -> EngineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_flat(parse_config_text(fh.read()))


def dump_config(config: EngineConfig) -> str:
    flat = config_to_flat(config)
    lines = []
    for key in CONFIG_KEYS:
        if key in flat:
            v = flat[key]
            lines.append(f"{key} = {int(v) if key in _INT_KEYS else format(v, '.17g')}")
    return "\n".join(lines) + "\n"


def config_hash(config: EngineConfig) -> str:
    return hashlib.sha256(dump_config(config).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Presets

_PAPER_DURATIONS = StrokeDurations(0.78125, 1.84375, 0.6875, 2.625)


def _base(**kwargs) -> EngineConfig:
    return EngineConfig(**kwargs)


def preset(name: str) -> EngineConfig:
    """Built-in configurations.  ``-lite`` variants keep the work medium and the
    effective dephasing rate but scale the dephasing mode down for quick runs."""
    presets = {
        "paper-4.1": lambda: _base(strokes=_PAPER_DURATIONS),
        "quasistatic-check": lambda: _base(strokes=StrokeDurations(100.0, 100.0, 100.0, 100.0)),
        "paper-4.3": lambda: _base(
            dephasing=DephasingBathParams(256.0, 128.0, 1024.0),
            strokes=_PAPER_DURATIONS,
        ),
        "paper-4.3-lite": lambda: _base(
            dephasing=DephasingBathParams(64.0, 8.0, 64.0),
            strokes=_PAPER_DURATIONS,
        ),
        "fig2": lambda: _base(
            dephasing=DephasingBathParams(0.5, 2.0, 10.0),
            strokes=StrokeDurations(2.0, 2.0, 2.0, 2.0),
        ),
        "appendixD": lambda: _appendix_base(128.0, 1024.0, 256.0, 2.0**-8),
        "appendixD-lite": lambda: _appendix_base(8.0, 64.0, 64.0, 2.0**-12),
    }
    presets["paper-4.1-lite"] = presets["paper-4.1"]
    presets["fig2-lite"] = presets["fig2"]
    if name not in presets:
        raise ConfigError(f"unknown preset '{name}'; available: {', '.join(sorted(presets))}")
    return presets[name]()


def _appendix_base(gamma_ref: float, omega0_ref: float, Gamma: float,
                   delta_gamma: float) -> EngineConfig:
    """Base point for the fixed-rate scaling studies: gamma just below gamma_0."""
    gamma0 = (4.0 * omega0_ref**2 + gamma_ref**2) / gamma_ref
    gamma = gamma0 - delta_gamma
    omega0 = 0.5 * math.sqrt(gamma * (gamma0 - gamma))
    return _base(
        dephasing=DephasingBathParams(Gamma, gamma, omega0),
        strokes=_PAPER_DURATIONS,
    )


PRESET_NAMES = (
    "paper-4.1", "paper-4.1-lite", "quasistatic-check",
    "paper-4.3", "paper-4.3-lite", "fig2", "fig2-lite",
    "appendixD", "appendixD-lite",
)

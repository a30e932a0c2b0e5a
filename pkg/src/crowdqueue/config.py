"""Scenario configuration files.

A scenario is a small TOML document with one table per concern::

    [corridor]
    width_m = [0.9, 3.3, 5.7]     # a list runs one scenario per width
    length_m = 9.6
    exit_width_m = 0.9
    cell_size_m = 0.3

    [agents]
    n = 60                        # scalar or one count per width

    [ca]
    beta = 3.84
    p_ex = 1.15

Every table and key is optional; anything missing takes the default below.
Unknown keys and wrongly typed values raise :class:`ConfigError` naming the
offending field, so typos never pass silently.  The raw text is kept so it
can be echoed into every output file.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .calibrate import TARGETS_MU0, TARGETS_MU1


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the dotted field name."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class CorridorSection:
    width_m: list = field(default_factory=lambda: [0.9])
    length_m: float = 9.6
    exit_width_m: float = 0.9
    cell_size_m: float = 0.3


@dataclass
class AgentsSection:
    n: list = field(default_factory=lambda: [60])


@dataclass
class CaSection:
    beta: float = 3.84
    mu: float = 1.0
    p_ex: float = 1.15
    dt: float = 0.0788
    gamma: float = 0.0
    rate_form: str = "standard"
    normalization: str = "local"
    exit_rule: str = "queue"
    max_steps: int = 1_000_000
    series_steps: int = 4000
    histogram_bins: int = 30


@dataclass
class PdeSection:
    variant: str = "standard"
    mu: float = 1.0
    beta: float = 3.84
    gamma: float = 0.0
    p_ex: float = 1.15
    p_ex_units: str = "model"               # or "persons_per_second"
    ca_dt: float = 0.0788                   # sets the seconds-per-unit clock
    t_end: float = 2000.0
    record_every: int = 10
    snapshot_every: int = 0
    hughes_every: int = 0
    closed: bool = False
    compare_pushing: bool = False
    stop_fraction: float = 1e-3


@dataclass
class RiemannSection:
    rho0: float = 0.4
    p_ex: float = 0.3
    L: float = 1.0
    map_size: int = 0
    n_points: int = 201


@dataclass
class CalibrateSection:
    beta_min: float = 0.5
    beta_max: float = 10.0
    beta_points: int = 20
    pex_min: float = 0.55
    pex_max: float = 1.65
    pex_points: int = 12
    targets_mu1: list = field(default_factory=lambda: list(TARGETS_MU1))
    targets_mu0: list = field(default_factory=lambda: list(TARGETS_MU0))
    fit: str = "reference"                  # or "measured"
    nbar_runs: int = 2000
    estimate_mu0: bool = True


@dataclass
class PotentialSection:
    demos: list = field(default_factory=lambda: ["corridor", "convex", "u_shape"])
    demo_size_m: float = 6.0
    demo_dx: float = 0.1


@dataclass
class RunSection:
    seed: int = 0
    runs: int = 500
    threads: int = 0                        # 0 lets the library decide


SECTIONS = {
    "corridor": CorridorSection, "agents": AgentsSection, "ca": CaSection, "pde": PdeSection,
    "riemann": RiemannSection, "calibrate": CalibrateSection, "potential": PotentialSection,
    "run": RunSection,
}

CHOICES = {
    "ca.rate_form": ("standard", "motivated_drift"),
    "ca.normalization": ("local", "capped"),
    "ca.exit_rule": ("queue", "move"),
    "pde.variant": ("standard", "pushing", "motivated_drift"),
    "pde.p_ex_units": ("model", "persons_per_second"),
    "calibrate.fit": ("reference", "measured"),
}
_DEMOS = ("corridor", "convex", "u_shape")


@dataclass
class Config:
    corridor: CorridorSection = field(default_factory=CorridorSection)
    agents: AgentsSection = field(default_factory=AgentsSection)
    ca: CaSection = field(default_factory=CaSection)
    pde: PdeSection = field(default_factory=PdeSection)
    riemann: RiemannSection = field(default_factory=RiemannSection)
    calibrate: CalibrateSection = field(default_factory=CalibrateSection)
    potential: PotentialSection = field(default_factory=PotentialSection)
    run: RunSection = field(default_factory=RunSection)
    source: str | None = None
    text: str = ""
    injected: list = field(default_factory=list)    # defaults filled in for absent keys

    def scenarios(self) -> list[tuple[float, int]]:
        """``(width_m, n_agents)`` pairs, broadcasting a single value."""
        widths, counts = self.corridor.width_m, self.agents.n
        if len(counts) == 1:
            counts = counts * len(widths)
        if len(widths) == 1:
            widths = widths * len(counts)
        if len(widths) != len(counts):
            raise ConfigError("agents.n", f"{len(counts)} counts for {len(widths)} widths")
        return list(zip(widths, counts))

    def as_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}


def _coerce(name: str, value, default):
    """Check ``value`` against the type of ``default``."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        if value < 0:
            raise ConfigError(name, f"must be >= 0, got {value}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(name, f"expected a string, got {value!r}")
        if name in CHOICES and value not in CHOICES[name]:
            raise ConfigError(name, f"must be one of {CHOICES[name]}, got {value!r}")
        return value
    if isinstance(default, list):
        items = value if isinstance(value, list) else [value]
        if not items:
            raise ConfigError(name, "must not be empty")
        proto = default[0]
        return [_coerce(f"{name}[{k}]", v, proto) for k, v in enumerate(items)]
    return value


def from_dict(data: dict, *, text: str = "", source: str | None = None) -> Config:
    cfg = Config(source=source, text=text)
    for section, body in data.items():
        if section not in SECTIONS:
            raise ConfigError(section, f"unknown table; expected one of {sorted(SECTIONS)}")
        if not isinstance(body, dict):
            raise ConfigError(section, "must be a table")
        target = getattr(cfg, section)
        known = {f.name for f in dataclasses.fields(target)}
        for key, value in body.items():
            name = f"{section}.{key}"
            if key not in known:
                raise ConfigError(name, "unknown key")
            setattr(target, key, _coerce(name, value, getattr(target, key)))
    for key in ("targets_mu1", "targets_mu0"):
        if key not in data.get("calibrate", {}):
            cfg.injected.append(f"calibrate.{key}")
    _validate(cfg)
    return cfg


def _validate(cfg: Config) -> None:
    for name in ("length_m", "exit_width_m", "cell_size_m"):
        if not getattr(cfg.corridor, name) > 0:
            raise ConfigError(f"corridor.{name}", "must be positive")
    if any(not w > 0 for w in cfg.corridor.width_m):
        raise ConfigError("corridor.width_m", "widths must be positive")
    if cfg.ca.mu > 1:
        raise ConfigError("ca.mu", f"must be <= 1, got {cfg.ca.mu}")
    if cfg.pde.mu > 1:
        raise ConfigError("pde.mu", f"must be <= 1, got {cfg.pde.mu}")
    for name in ("ca.gamma", "pde.gamma"):
        sec, key = name.split(".")
        if not 0 <= getattr(getattr(cfg, sec), key) <= 1:
            raise ConfigError(name, "must lie in [0, 1]")
    for name in ("ca.dt", "ca.p_ex", "pde.ca_dt"):
        sec, key = name.split(".")
        if not getattr(getattr(cfg, sec), key) > 0:
            raise ConfigError(name, "must be positive")
    if not 0 < cfg.riemann.rho0 < 1:
        raise ConfigError("riemann.rho0", "must lie in (0, 1)")
    if not 0 < cfg.riemann.p_ex <= 1:
        raise ConfigError("riemann.p_ex", "must lie in (0, 1]")
    for key in ("targets_mu1", "targets_mu0"):
        if len(getattr(cfg.calibrate, key)) != 3:
            raise ConfigError(f"calibrate.{key}", "needs one target per calibration run (3)")
    for key in ("beta_points", "pex_points"):
        if getattr(cfg.calibrate, key) < 5:
            raise ConfigError(f"calibrate.{key}", "use at least five points per axis")
    for demo in cfg.potential.demos:
        if demo not in _DEMOS:
            raise ConfigError("potential.demos", f"unknown demo {demo!r}; expected {_DEMOS}")
    if cfg.run.runs < 1:
        raise ConfigError("run.runs", "must be >= 1")
    cfg.scenarios()


def loads(text: str, source: str | None = None) -> Config:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"not valid TOML: {exc}") from exc
    return from_dict(data, text=text, source=source)


def load(path) -> Config:
    """Read and validate a scenario file.  ``OSError`` propagates unchanged."""
    path = Path(path)
    return loads(path.read_text(), source=str(path))


def default() -> Config:
    return from_dict({})

"""Experiment configuration loaded from TOML."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


EXPERIMENTS = ("fem-rate", "delta-sweep", "trunc-sweep", "validate", "trajectory")


@dataclass
class ExperimentConfig:
    experiment: str = "fem-rate"
    graph: dict = field(default_factory=lambda: {"source": "builtin", "name": "interval"})
    coefficients: dict = field(default_factory=lambda: {"source": "constant"})
    weight: dict = field(default_factory=lambda: {"family": "unit"})
    R: float | None = None
    R_list: list = field(default_factory=list)
    R_ref: float | None = None
    cutoff: str = "linear"
    delta: float | None = None
    delta_list: list = field(default_factory=list)
    h: float | None = None
    h_list: list = field(default_factory=list)
    h_ref: float | None = None
    dt_rule: str = "h"
    dt_scale: float = 1.0
    noise: dict = field(default_factory=lambda: {"mode": "none"})
    drift: dict = field(default_factory=lambda: {"kind": "zero"})
    diffusion: dict = field(default_factory=lambda: {"kind": "zero"})
    u0: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    T: float = 0.1
    seeds: object = 1
    seed_base: int = 0
    reference: str = "fine"
    criteria: dict = field(default_factory=dict)
    out: str = "out"
    threads: int = 1
    timing: bool = False
    base_dir: str = "."

    def seed_list(self):
        if isinstance(self.seeds, int):
            return list(range(self.seed_base, self.seed_base + self.seeds))
        return [int(s) for s in self.seeds]

    @property
    def stochastic(self):
        return self.noise.get("mode", "none") != "none" and self.diffusion.get("kind", "zero") != "zero"

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self):
        return asdict(self)


_KNOWN = set(ExperimentConfig.__dataclass_fields__)


def _strictly(seq, decreasing):
    pairs = list(zip(seq, seq[1:]))
    return all((a > b) if decreasing else (a < b) for a, b in pairs)


def validate_config(cfg: ExperimentConfig):
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; expected one of {EXPERIMENTS}")
    if cfg.h_list:
        if not _strictly(cfg.h_list, True):
            raise ConfigError("h_list must be strictly decreasing")
        for a, b in zip(cfg.h_list, cfg.h_list[1:]):
            r = a / b
            if abs(r - round(r)) > 1e-9 or round(r) & (round(r) - 1):
                raise ConfigError("h_list must be nested (consecutive ratios powers of two)")
    if cfg.h_ref is not None and cfg.h_list:
        r = cfg.h_list[-1] / cfg.h_ref
        if abs(r - round(r)) > 1e-9 or round(r) < 2 or round(r) & (round(r) - 1):
            raise ConfigError("h_ref must be finer than the last h by a power of two")
    if cfg.delta_list and not _strictly(cfg.delta_list, True):
        raise ConfigError("delta_list must be strictly decreasing")
    if cfg.R_list and not _strictly(cfg.R_list, False):
        raise ConfigError("R_list must be strictly increasing")
    if cfg.dt_rule not in ("h", "h2", "fixed"):
        raise ConfigError(f"dt_rule must be 'h', 'h2' or 'fixed', got {cfg.dt_rule!r}")
    if cfg.cutoff not in ("linear", "smoothed-linear"):
        raise ConfigError(f"unknown cut-off {cfg.cutoff!r}")
    if not cfg.T >= 0:
        raise ConfigError("T must be non-negative")
    if cfg.reference not in ("fine", "closed-form"):
        raise ConfigError(f"unknown reference {cfg.reference!r}")
    if isinstance(cfg.seeds, int) and cfg.seeds < 1:
        raise ConfigError("need at least one seed")
    # name resolution is delegated to the builders so that errors carry context
    from . import harness

    harness.check_names(cfg)
    return cfg


def config_from_dict(d: dict, base_dir=".") -> ExperimentConfig:
    unknown = set(d) - _KNOWN
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(**d)
    cfg.base_dir = str(base_dir)
    for name in ("R", "R_ref", "delta", "h", "h_ref"):
        v = getattr(cfg, name)
        if v is not None and not (isinstance(v, (int, float)) and math.isfinite(v)):
            raise ConfigError(f"{name} must be a finite number")
    return validate_config(cfg)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return config_from_dict(data, base_dir=path.parent)

"""Flat TOML experiment configuration with documented defaults."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .control_basis import RbfDictionary, double_well_dictionary
from .cross_entropy import CeConfig
from .pde_reference import PdeGrid
from .sde_core import SdeProblem


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class DoubleWellDrift:
    """b(x) = -V'(x) for V(x) = kappa (x^2 - 1)^2."""

    def __init__(self, kappa: float = 1.0):
        self.kappa = float(kappa)

    def __call__(self, x, t=0.0):
        x = np.asarray(x, dtype=np.float64)
        return -4.0 * self.kappa * x * (x * x - 1.0)

    def potential(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.kappa * (x * x - 1.0) ** 2

    def __repr__(self):
        return f"DoubleWellDrift(kappa={self.kappa!r})"


class QuadraticCost:
    """g(x) = nu (x - target)^2."""

    def __init__(self, nu: float = 1.0, target: float = 1.0):
        self.nu = float(nu)
        self.target = float(target)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.nu * (x - self.target) ** 2

    def __repr__(self):
        return f"QuadraticCost(nu={self.nu!r}, target={self.target!r})"


@dataclass(frozen=True)
class ExperimentConfig:
    # problem; T is an artifact default (the horizon is not given for the double well)
    epsilon: float = 0.05
    dt: float = 0.001
    T: float = 1.0
    x0: float = -1.0
    kappa: float = 1.0
    nu: float = 1.0
    # dictionary: centers center_start + center_step * m, m = 1..J
    J: int = 17
    center_start: float = -1.5
    center_step: float = 0.1
    width: float = 0.5
    # cross-entropy
    N_ce: int = 30000
    max_iters: int = 10
    ridge: float = 1e-6
    ridge_relative: bool = True
    tol: float = 1e-2
    # estimation
    N_estimate: int = 30000
    # reference PDE
    pde_x_min: float = -6.0
    pde_x_max: float = 6.0
    pde_nx: int = 16001
    pde_nt: int = 4000
    # sweep
    epsilons: tuple = (0.4, 0.2, 0.1, 0.05)
    # output
    out: str = "results"
    seed: int = 0
    n_plot_paths: int = 100

    def problem(self) -> SdeProblem:
        return SdeProblem(
            DoubleWellDrift(self.kappa), self.epsilon, QuadraticCost(self.nu), self.x0, self.T, self.dt
        )

    def dictionary(self) -> RbfDictionary:
        return double_well_dictionary(self.J, self.center_start, self.center_step, self.width)

    def ce_config(self) -> CeConfig:
        return CeConfig(
            n_paths=self.N_ce,
            max_iters=self.max_iters,
            ridge=self.ridge,
            relative_ridge=self.ridge_relative,
            tol=self.tol,
            seed=self.seed,
        )

    def pde_grid(self) -> PdeGrid:
        return PdeGrid(self.pde_x_min, self.pde_x_max, self.pde_nx, self.pde_nt)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["epsilons"] = list(self.epsilons)
        return d


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_INT_KEYS = {"J", "N_ce", "max_iters", "N_estimate", "pde_nx", "pde_nt", "seed", "n_plot_paths"}
_BOOL_KEYS = {"ridge_relative"}
_STR_KEYS = {"out"}
_POSITIVE = {"epsilon", "dt", "T", "width", "tol", "center_step"}
_NONNEGATIVE = {"kappa", "nu", "ridge", "max_iters"}
_AT_LEAST = {"J": 1, "N_ce": 2, "N_estimate": 1, "pde_nx": 3, "pde_nt": 1, "n_plot_paths": 0}


def _coerce(key: str, value):
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected a boolean, got {value!r}")
        return value
    if key in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if key == "epsilons":
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, f"expected a list of numbers, got {value!r}")
        return tuple(_coerce_float(key, v) for v in value)
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    return _coerce_float(key, value)


def _coerce_float(key, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(key, f"must be finite, got {value!r}")
    return value


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    for key in _POSITIVE:
        if not getattr(cfg, key) > 0:
            raise ConfigError(key, f"must be positive, got {getattr(cfg, key)!r}")
    for key in _NONNEGATIVE:
        if not getattr(cfg, key) >= 0:
            raise ConfigError(key, f"must be nonnegative, got {getattr(cfg, key)!r}")
    for key, low in _AT_LEAST.items():
        if getattr(cfg, key) < low:
            raise ConfigError(key, f"must be >= {low}, got {getattr(cfg, key)!r}")
    for eps in cfg.epsilons:
        if not eps > 0:
            raise ConfigError("epsilons", f"every entry must be positive, got {eps!r}")
    ratio = cfg.T / cfg.dt
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ConfigError("dt", f"T/dt = {ratio!r} must be an integer (grid closure)")
    if not cfg.pde_x_min < cfg.x0 < cfg.pde_x_max:
        raise ConfigError("pde_x_min", f"PDE domain [{cfg.pde_x_min}, {cfg.pde_x_max}] must contain x0={cfg.x0}")
    return cfg


def config_from_mapping(mapping: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = ExperimentConfig() if base is None else base
    updates = {}
    for key, value in mapping.items():
        if key not in _FIELDS:
            raise ConfigError(key, "unknown configuration key")
        updates[key] = _coerce(key, value)
    return validate(replace(base, **updates))


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse a flat ``key = value`` TOML document; omitted keys take defaults."""
    try:
        mapping = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<document>", f"malformed TOML: {exc}") from exc
    for key, value in mapping.items():
        if isinstance(value, dict):
            raise ConfigError(key, "tables are not allowed; the configuration is flat")
    return config_from_mapping(mapping, base)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return validate(ExperimentConfig())
    return parse_config(Path(path).read_text())


def parse_override(item: str) -> tuple[str, object]:
    """``key=value`` with the value read as a TOML literal, else a bare string."""
    if "=" not in item:
        raise ConfigError(item, "override must look like key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    raw = raw.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    mapping = dict(parse_override(item) for item in overrides)
    return config_from_mapping(mapping, cfg)

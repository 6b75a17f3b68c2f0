"""
robustadp/config.py
Run and experiment configuration.

Experiment config (YAML); every key is optional and unknown keys are rejected:

    up: 1.02
    down: 0.98
    p: 0.5
    horizon: 20
    strike: 100.0
    x0: 100.0
    jitter: 2.0
    n_data: [10, 50, 200]      # scalar or list
    alpha: [0.05, 0.5]         # scalar or list
    n_sim: 2000
    n_test: 5000
    repetitions: 200
    discount: 0.999
    percentiles: [5, 10, ..., 95]
    rbf_grid: 7
    price_range: [0.7, 1.3]
    ridge: 1.0e-6
    seed: 0
"""

from __future__ import annotations
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from robustadp.errors import ConfigError


@dataclass(frozen=True)
class PricingConfig:
    up: float = 1.02
    down: float = 0.98
    p: float = 0.5
    horizon: int = 20
    strike: float = 100.0
    x0: float = 100.0
    jitter: float = 2.0
    n_data: tuple[int, ...] = (10,)
    alpha: tuple[float, ...] = (0.05,)
    n_sim: int = 2000
    n_test: int = 5000
    repetitions: int = 200
    discount: float = 0.999
    percentiles: tuple[int, ...] = tuple(range(5, 100, 5))
    rbf_grid: int = 7
    price_range: tuple[float, float] = (0.7, 1.3)
    ridge: float = 1e-6
    inner_tol: float = 1e-8
    inner_max: int = 1000
    outer_max: int = 30
    seed: int = 0

    def __post_init__(self) -> None:
        problems = []
        if not 0.0 < self.down < self.up:
            problems.append("need 0 < down < up")
        if not 0.0 < self.p < 1.0:
            problems.append("p must lie in (0, 1)")
        if self.horizon < 1:
            problems.append("horizon must be positive")
        if self.x0 - self.jitter <= 0.0 or self.jitter < 0.0:
            problems.append("jitter must be non-negative and keep the start price positive")
        if any(a <= 0.0 or a >= 1.0 for a in self.alpha):
            problems.append("alpha values must lie in (0, 1)")
        if any(n < 1 for n in self.n_data) or self.n_sim < 1 or self.n_test < 1:
            problems.append("sample counts must be positive")
        if self.repetitions < 2:
            problems.append("a paired test needs at least 2 repetitions")
        if not 0.0 < self.discount <= 1.0:
            problems.append("discount must lie in (0, 1]")
        if any(not 0 < q <= 100 for q in self.percentiles):
            problems.append("percentiles must lie in (0, 100]")
        if self.ridge < 0.0:
            problems.append("ridge must be non-negative")
        if problems:
            raise ConfigError("; ".join(problems))

    def settings(self) -> list[tuple[float, int]]:
        """Every (alpha, n_data) combination of the grid, in file order."""
        return [(a, n) for a in self.alpha for n in self.n_data]

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _as_tuple(value: Any, kind: type) -> tuple:
    items = value if isinstance(value, (list, tuple)) else [value]
    return tuple(kind(v) for v in items)


def pricing_config_from_dict(data: dict | None) -> PricingConfig:
    data = dict(data or {})
    known = {f.name for f in fields(PricingConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    try:
        for key, kind in (("n_data", int), ("alpha", float), ("percentiles", int)):
            if key in data:
                data[key] = _as_tuple(data[key], kind)
        if "price_range" in data:
            lo, hi = data["price_range"]
            data["price_range"] = (float(lo), float(hi))
        for key in ("horizon", "n_sim", "n_test", "repetitions", "rbf_grid",
                    "inner_max", "outer_max", "seed"):
            if key in data:
                data[key] = int(data[key])
        for key in ("up", "down", "p", "strike", "x0", "jitter", "discount", "ridge", "inner_tol"):
            if key in data:
                data[key] = float(data[key])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad config value: {e}") from e
    return PricingConfig(**data)


def load_pricing_config(path: str | Path) -> PricingConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return pricing_config_from_dict(data)


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings of one CLI invocation, embedded in every output header."""
    subcommand: str
    source: str | None = None
    seed: int | None = None
    tol: float = 1e-10
    max_iters: int | None = None
    out: str = "out"
    options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.options.get("sampled") and self.seed is None:
            raise ConfigError(f"'{self.subcommand}' samples data and needs --seed")
        if self.tol <= 0.0:
            raise ConfigError("tolerance must be positive")

    def to_dict(self) -> dict:
        return _plain(asdict(self))

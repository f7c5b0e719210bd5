"""Run configuration: a single JSON document mirroring the library dataclasses.

Unknown keys are errors (a typo must never silently fall back to a default),
and ``RunConfig.to_dict`` materializes every default so emitted reports are
self-describing.
"""
from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .channel import ChannelSpec
from .decoy import DecoyProtocolSpec
from .errors import ConfigError, QSIError
from .photon_sources import SourceKind, SourceSpec


@dataclass(frozen=True)
class Fig1Config:
    alpha: float = 0.5
    fano_range: tuple[float, float] = (0.7, 1.0)
    n_range: tuple[float, float] = (0.05, 1.0)
    steps: int = 31

    def __post_init__(self) -> None:
        _check_range(self.fano_range, "fano_range", lower=0.0)
        _check_range(self.n_range, "n_range", lower=0.0, strict=True)
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if int(self.steps) != self.steps or self.steps < 2:
            raise ConfigError("steps must be an integer >= 2")


@dataclass(frozen=True)
class Fig2Config:
    x_max: float = 1.0
    steps: int = 100
    n_cut: int = 20
    bracket: tuple[float, float] = (0.1, 1.0)

    def __post_init__(self) -> None:
        if not self.x_max > 0:
            raise ConfigError("x_max must be > 0")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigError("steps must be a positive integer")
        _check_range(self.bracket, "bracket", lower=0.0)


@dataclass(frozen=True)
class RegimeConfig:
    mu_points: tuple[float, ...]
    decoys: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.mu_points:
            raise ConfigError("mu_points must not be empty")


def _default_regimes() -> dict[str, RegimeConfig]:
    return {
        "a": RegimeConfig((0.01, 0.05, 0.1), (0.001, 0.0)),
        "b": RegimeConfig((0.2, 0.25, 0.3), (0.1, 0.0)),
    }


@dataclass(frozen=True)
class Fig3Config:
    loss_points: tuple[float, ...] = tuple(float(v) for v in range(0, 42, 2))
    regimes: dict[str, RegimeConfig] = field(default_factory=_default_regimes)
    decoy_mode: str = "fixed"

    def __post_init__(self) -> None:
        if not self.loss_points:
            raise ConfigError("loss_points must not be empty")
        if any(b <= a for a, b in zip(self.loss_points, self.loss_points[1:])) or min(self.loss_points) < 0:
            raise ConfigError("loss_points must be nonnegative and strictly increasing")
        if not self.regimes:
            raise ConfigError("at least one regime is required")
        if self.decoy_mode not in ("fixed", "scaled"):
            raise ConfigError("decoy_mode must be 'fixed' or 'scaled'")
        for name, regime in self.regimes.items():
            top = max(regime.decoys, default=0.0)
            if min(regime.decoys, default=0.0) < 0 or min(regime.mu_points) <= top:
                raise ConfigError(f"regimes.{name}: every mu must exceed every decoy, and decoys must be >= 0")


@dataclass(frozen=True)
class SimulateConfig:
    scene_path: str | None = None
    width: int = 8
    height: int = 8
    alpha: float = 0.5
    source: str = "WCS"
    pulses_per_pixel: int = 10_000
    eavesdropper: bool = False
    qber_threshold: float = 0.11
    loss_db: float = 0.0

    def __post_init__(self) -> None:
        if self.source not in ("WCS", "HSPS"):
            raise ConfigError("source must be 'WCS' or 'HSPS'")
        if int(self.pulses_per_pixel) != self.pulses_per_pixel or self.pulses_per_pixel < 1:
            raise ConfigError("pulses_per_pixel must be a positive integer")
        if self.width < 1 or self.height < 1:
            raise ConfigError("width and height must be >= 1")
        if not 0.0 < self.qber_threshold <= 0.5:
            raise ConfigError("qber_threshold must lie in (0, 0.5]")


@dataclass(frozen=True)
class OptimizeConfig:
    loss_db: float = 10.0
    brackets: dict[str, tuple[float, float]] = field(
        default_factory=lambda: {"WCS": (0.01, 1.0), "HSPS": (0.002, 1.0)}
    )
    tolerance: float = 1e-3
    decoy_mode: str = "scaled"
    rate_floor: float = 1e-10
    loss_cap_db: float = 60.0

    def __post_init__(self) -> None:
        if self.decoy_mode not in ("fixed", "scaled"):
            raise ConfigError("decoy_mode must be 'fixed' or 'scaled'")
        for name, br in self.brackets.items():
            if name not in ("WCS", "HSPS"):
                raise ConfigError(f"unknown source {name!r} in brackets")
            _check_range(br, f"brackets.{name}", lower=0.0, strict=True)
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be > 0")
        if not self.rate_floor >= 0:
            raise ConfigError("rate_floor must be >= 0")


def _default_sources() -> dict[str, SourceSpec]:
    return {"WCS": SourceSpec(SourceKind.WCS), "HSPS": SourceSpec(SourceKind.HSPS)}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 20240601
    output_formats: tuple[str, ...] = ("csv", "json")
    sources: dict[str, SourceSpec] = field(default_factory=_default_sources)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    decoy: DecoyProtocolSpec = field(default_factory=DecoyProtocolSpec)
    fig1: Fig1Config = field(default_factory=Fig1Config)
    fig2: Fig2Config = field(default_factory=Fig2Config)
    fig3: Fig3Config = field(default_factory=Fig3Config)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    optimize: OptimizeConfig = field(default_factory=OptimizeConfig)

    def __post_init__(self) -> None:
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        bad = set(self.output_formats) - {"csv", "json"}
        if bad or not self.output_formats:
            raise ConfigError(f"output_formats must be a non-empty subset of csv, json (got {sorted(bad)})")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build_run_config(data)

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return _build_run_config(data)

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    def source(self, kind: str) -> SourceSpec:
        return self.sources[kind]


def _check_range(value, name: str, lower: float, strict: bool = False) -> None:
    if len(value) != 2:
        raise ConfigError(f"{name} must be a [low, high] pair")
    lo, hi = value
    if hi < lo or lo < lower or (strict and lo <= lower):
        raise ConfigError(f"{name} = {list(value)} is not a valid non-empty range")


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


_TUPLE_FIELDS = {"fano_range", "n_range", "bracket", "loss_points", "mu_points", "decoys",
                 "decoy_intensities", "output_formats"}


def _build(cls, data: Any, path: str, **nested):
    """Instantiate dataclass ``cls`` from ``data``, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key in nested:
            kwargs[key] = nested[key](value, where)
        elif key in _TUPLE_FIELDS:
            if not isinstance(value, list):
                raise ConfigError(f"{where}: expected a list")
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (QSIError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _build_sources(data: Any, path: str) -> dict[str, SourceSpec]:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    merged = _default_sources()
    for name, spec in data.items():
        if name not in ("WCS", "HSPS"):
            raise ConfigError(f"{path}: unknown source {name!r}")
        if not isinstance(spec, dict):
            raise ConfigError(f"{path}.{name}: expected a JSON object")
        if "kind" in spec and spec["kind"] != name:
            raise ConfigError(f"{path}.{name}.kind must be {name!r}")
        merged[name] = _build(SourceSpec, {**spec, "kind": name}, f"{path}.{name}")
    return merged


def _build_regimes(data: Any, path: str) -> dict[str, RegimeConfig]:
    if not isinstance(data, dict) or not data:
        raise ConfigError(f"{path}: expected a non-empty JSON object")
    return {name: _build(RegimeConfig, spec, f"{path}.{name}") for name, spec in data.items()}


def _build_brackets(data: Any, path: str) -> dict[str, tuple[float, float]]:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    merged = OptimizeConfig().brackets
    for name, value in data.items():
        if not isinstance(value, list):
            raise ConfigError(f"{path}.{name}: expected a [low, high] list")
        merged[name] = tuple(value)
    return merged


def _build_run_config(data: dict) -> RunConfig:
    return _build(
        RunConfig,
        data,
        "",
        sources=_build_sources,
        channel=lambda d, p: _build(ChannelSpec, d, p),
        decoy=lambda d, p: _build(DecoyProtocolSpec, d, p),
        fig1=lambda d, p: _build(Fig1Config, d, p),
        fig2=lambda d, p: _build(Fig2Config, d, p),
        fig3=lambda d, p: _build(Fig3Config, d, p, regimes=_build_regimes),
        simulate=lambda d, p: _build(SimulateConfig, d, p),
        optimize=lambda d, p: _build(OptimizeConfig, d, p, brackets=_build_brackets),
    )

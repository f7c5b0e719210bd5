"""Rate-vs-loss sweeps, curve spread, optimal signal intensity and maximum loss."""
from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .channel import ChannelSpec
from .decoy import DecoyProtocolSpec, KeyRateResult, secure_key_rate, throughput_fom
from .errors import DomainError, InfeasibleError, InsufficientDataError, QSIError
from .parallel import ordered_map
from .photon_sources import SourceSpec

DEFAULT_RATE_FLOOR = 1e-10
DEFAULT_LOSS_CAP_DB = 60.0
COARSE_GRID_POINTS = 50


def decoys_for(template: DecoyProtocolSpec, mu: float, mode: str = "fixed") -> DecoyProtocolSpec:
    """Protocol at signal intensity ``mu``.

    ``mode="fixed"`` keeps the template's decoys; ``"scaled"`` keeps the ratio
    of every decoy to the template's signal intensity.
    """
    if mode == "fixed":
        decoys = template.decoy_intensities
    elif mode == "scaled":
        ratio = mu / template.signal_intensity
        decoys = tuple(v * ratio for v in template.decoy_intensities)
    else:
        raise DomainError(f"unknown decoy mode {mode!r}")
    return dataclasses.replace(template, signal_intensity=mu, decoy_intensities=decoys)


@dataclass(frozen=True)
class SweepGrid:
    loss_points: tuple[float, ...]
    mu_points: tuple[float, ...]
    sources: tuple[SourceSpec, ...]
    decoy: DecoyProtocolSpec = field(default_factory=DecoyProtocolSpec)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    decoy_mode: str = "fixed"

    def __post_init__(self) -> None:
        object.__setattr__(self, "loss_points", tuple(float(v) for v in self.loss_points))
        object.__setattr__(self, "mu_points", tuple(float(v) for v in self.mu_points))
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.loss_points or not self.mu_points or not self.sources:
            raise DomainError("sweep grid needs at least one loss point, mu and source")
        if any(b <= a for a, b in zip(self.loss_points, self.loss_points[1:])):
            raise DomainError("loss_points must be strictly increasing")
        if self.decoy_mode == "fixed":
            top = max(self.decoy.decoy_intensities, default=0.0)
            if any(mu <= top for mu in self.mu_points):
                raise DomainError(f"every mu must exceed the largest decoy {top}")
        elif self.decoy_mode != "scaled":
            raise DomainError(f"unknown decoy mode {self.decoy_mode!r}")


@dataclass(frozen=True)
class CurveRow:
    source: str
    mu: float
    nu: float
    loss_db: float
    rate: float
    throughput_bps: float
    feasible: bool
    result: KeyRateResult | None = field(default=None, compare=False, repr=False)


CURVE_HEADER = ("source", "mu", "nu", "loss_db", "rate", "throughput_bps", "feasible")


@dataclass
class CurveTable:
    rows: list[CurveRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for r in self.rows:
            writer.writerow([
                r.source, fmt_float(r.mu), fmt_float(r.nu), fmt_float(r.loss_db),
                fmt_float(r.rate), fmt_float(r.throughput_bps), str(r.feasible).lower(),
            ])
        return buf.getvalue()

    def select(self, source: str | None = None, loss_db: float | None = None, mu: float | None = None):
        return [
            r for r in self.rows
            if (source is None or r.source == source)
            and (loss_db is None or r.loss_db == loss_db)
            and (mu is None or r.mu == mu)
        ]


def fmt_float(value: float) -> str:
    return format(float(value), ".17g")


def _evaluate(source: SourceSpec, spec: DecoyProtocolSpec, ch: ChannelSpec) -> CurveRow:
    nu = spec.weak_decoy
    try:
        result = secure_key_rate(spec, source, ch)
    except QSIError:
        return CurveRow(source.kind.value, spec.signal_intensity, nu, ch.loss_db, 0.0, 0.0, False)
    return CurveRow(
        source.kind.value, spec.signal_intensity, nu, ch.loss_db, result.rate,
        throughput_fom(result.rate, source.repetition_rate), result.feasible, result,
    )


def rate_vs_loss(grid: SweepGrid) -> CurveTable:
    """One row per (source, mu, loss), in that nesting order."""
    points = [
        (src.with_intensity(mu), decoys_for(grid.decoy, mu, grid.decoy_mode),
         dataclasses.replace(grid.channel, loss_db=loss))
        for src in grid.sources
        for mu in grid.mu_points
        for loss in grid.loss_points
    ]
    return CurveTable(ordered_map(lambda p: _evaluate(*p), points))


def curve_spread(table: CurveTable, loss_db: float, source: str | None = None) -> float:
    """(max - min) / mean of the positive rates across mu at one loss point."""
    rates = [r.rate for r in table.select(source=source, loss_db=loss_db) if r.feasible and r.rate > 0]
    if len(rates) < 2:
        raise InsufficientDataError(f"need >= 2 positive rates at {loss_db} dB, got {len(rates)}")
    return (max(rates) - min(rates)) / float(np.mean(rates))


def refine_max(f: Callable[[float], float], lo: float, hi: float, tol: float) -> tuple[float, float]:
    """Maximize a unimodal ``f`` on [lo, hi] to abscissa tolerance ``tol`` (bounded Brent)."""
    res = optimize.minimize_scalar(lambda v: -f(v), bounds=(lo, hi), method="bounded", options={"xatol": tol})
    x = float(res.x)
    return x, f(x)


def optimize_mu(
    source: SourceSpec,
    ch: ChannelSpec,
    decoy_template: DecoyProtocolSpec,
    bracket: Sequence[float] = (0.01, 1.0),
    tolerance: float = 1e-3,
    decoy_mode: str = "scaled",
    rate_fn: Callable[[float], float] | None = None,
) -> tuple[float, float]:
    """Signal intensity maximizing the key rate: coarse grid scan, then bounded Brent refinement.

    ``rate_fn`` replaces the key-rate evaluation (used to test the optimizer
    on synthetic objectives).
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not tolerance > 0:
        raise DomainError("tolerance must be > 0")
    if not 0 < lo <= hi:
        raise DomainError(f"invalid bracket {bracket!r}")

    if rate_fn is None:
        def rate_fn(mu: float) -> float:
            spec = decoys_for(decoy_template, mu, decoy_mode)
            return secure_key_rate(spec, source.with_intensity(mu), ch).rate

    if hi - lo <= tolerance:
        mid = 0.5 * (lo + hi)
        value = rate_fn(mid)
        if value <= 0:
            raise InfeasibleError(f"zero key rate at mu={mid}")
        return mid, value

    grid = np.linspace(lo, hi, COARSE_GRID_POINTS)
    values = np.array(ordered_map(rate_fn, grid))
    if not np.any(values > 0):
        raise InfeasibleError(f"key rate is zero everywhere on [{lo}, {hi}]")
    best = int(np.argmax(values))
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, grid.size - 1)]
    # Finer than tolerance so that mu* +/- tolerance cannot beat mu*.
    mu_star, r_star = refine_max(rate_fn, a, b, tolerance / 10.0)
    if r_star < values[best]:
        return float(grid[best]), float(values[best])
    return float(mu_star), float(r_star)


def max_tolerable_loss(
    source: SourceSpec,
    mu: float,
    ch_template: ChannelSpec,
    decoy: DecoyProtocolSpec,
    rate_floor: float = DEFAULT_RATE_FLOOR,
    cap_db: float = DEFAULT_LOSS_CAP_DB,
    tol_db: float = 0.01,
    decoy_mode: str = "fixed",
) -> float:
    """Largest loss (dB) at which the key rate stays above ``rate_floor``.

    Returns ``math.inf`` when the rate is still above the floor at ``cap_db``.
    """
    spec = decoys_for(decoy, mu, decoy_mode)
    src = source.with_intensity(mu)

    def rate(loss: float) -> float:
        return secure_key_rate(spec, src, dataclasses.replace(ch_template, loss_db=loss)).rate

    if rate(0.0) <= rate_floor:
        raise InfeasibleError(f"rate at 0 dB does not exceed the floor {rate_floor}")
    if rate(cap_db) > rate_floor:
        return math.inf
    lo, hi = 0.0, cap_db
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if rate(mid) > rate_floor:
            lo = mid
        else:
            hi = mid
    return lo

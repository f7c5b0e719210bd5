"""Photon-number statistics of weak coherent (WCS) and heralded (HSPS) sources.

Distributions are truncated at ``n_cut`` and carry the probability of the
truncated tail explicitly instead of renormalizing it away, so that security
bounds downstream can treat the tail conservatively.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .errors import BracketError, DomainError, HeraldingImpossibleError

NORMALIZATION_TOL = 1e-9
TAIL_CAP = 1e-9
DEFAULT_N_CUT = 20


@dataclass(frozen=True, eq=False)
class PhotonNumberDistribution:
    """Probabilities for k = 0..n_cut plus the mass of k > n_cut."""

    probs: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "tail_mass", float(self.tail_mass))
        if probs.ndim != 1 or probs.size < 3:
            raise DomainError("n_cut must be >= 2 (vacuum, single and multi-photon terms)")
        if np.any(probs < 0.0) or np.any(probs > 1.0) or not np.all(np.isfinite(probs)):
            raise DomainError("probabilities must lie in [0, 1]")
        if not 0.0 <= self.tail_mass <= 1.0:
            raise DomainError(f"tail_mass {self.tail_mass} outside [0, 1]")
        total = probs.sum() + self.tail_mass
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise DomainError(f"distribution not normalized: sum = {total!r}")

    @property
    def n_cut(self) -> int:
        return self.probs.size - 1

    @property
    def truncation_warning(self) -> bool:
        """True when the truncated tail exceeds ``TAIL_CAP``."""
        return self.tail_mass > TAIL_CAP

    def to_dict(self) -> dict:
        return {"probs": self.probs.tolist(), "n_cut": self.n_cut, "tail_mass": self.tail_mass}

    @classmethod
    def from_dict(cls, data: dict) -> "PhotonNumberDistribution":
        dist = cls(np.asarray(data["probs"], dtype=float), data["tail_mass"])
        if "n_cut" in data and int(data["n_cut"]) != dist.n_cut:
            raise DomainError("n_cut does not match the length of probs")
        return dist

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PhotonNumberDistribution):
            return NotImplemented
        return self.tail_mass == other.tail_mass and np.array_equal(self.probs, other.probs)

    __hash__ = None  # type: ignore[assignment]


def _check_n_cut(n_cut: int) -> None:
    if int(n_cut) != n_cut or n_cut < 2:
        raise DomainError(f"n_cut must be an integer >= 2, got {n_cut!r}")


def vacuum_distribution(n_cut: int = DEFAULT_N_CUT) -> PhotonNumberDistribution:
    _check_n_cut(n_cut)
    probs = np.zeros(n_cut + 1)
    probs[0] = 1.0
    return PhotonNumberDistribution(probs, 0.0)


def wcs_distribution(x: float, n_cut: int = DEFAULT_N_CUT) -> PhotonNumberDistribution:
    """Poissonian photon statistics of a phase-randomized attenuated laser."""
    if not math.isfinite(x) or x < 0:
        raise DomainError(f"mean photon number must be >= 0, got {x!r}")
    _check_n_cut(n_cut)
    if x == 0:
        return vacuum_distribution(n_cut)
    k = np.arange(n_cut + 1)
    probs = stats.poisson.pmf(k, x)
    tail = float(stats.poisson.sf(n_cut, x))
    return PhotonNumberDistribution(probs, tail)


def herald_probability(x: float, herald_efficiency: float, herald_dark: float) -> float:
    """Probability that a pump pulse produces a herald click.

    Closed form of sum_k x^k/(1+x)^(k+1) * (1 - (1-eta)^k + d) over all k.
    """
    return herald_efficiency * x / (1.0 + herald_efficiency * x) + herald_dark


def click_probability(k, eta: float):
    """1 - (1 - eta)^k without cancellation at small eta."""
    if eta >= 1.0:
        return np.where(np.asarray(k) > 0, 1.0, 0.0)
    return -np.expm1(np.asarray(k, dtype=float) * np.log1p(-eta))


def hsps_distribution(
    x: float,
    herald_efficiency: float,
    herald_dark: float,
    correlation_prob: float = 1.0,
    n_cut: int = DEFAULT_N_CUT,
) -> PhotonNumberDistribution:
    """Signal-mode statistics of a thermal SPDC source conditioned on a herald click.

    ``x`` is the mean pair number per heralding window. The herald detector has
    efficiency ``herald_efficiency`` and dark-click probability ``herald_dark``.
    With probability ``1 - correlation_prob`` a herald is not correlated with
    the emitted signal mode and the heralded pulse carries vacuum.
    """
    if not math.isfinite(x) or x < 0:
        raise DomainError(f"mean pair number must be >= 0, got {x!r}")
    if not 0.0 <= herald_efficiency <= 1.0:
        raise DomainError("herald_efficiency must lie in [0, 1]")
    if not 0.0 <= herald_dark < 1.0:
        raise DomainError("herald_dark must lie in [0, 1)")
    if not 0.0 <= correlation_prob <= 1.0:
        raise DomainError("correlation_prob must lie in [0, 1]")
    _check_n_cut(n_cut)

    p_post = herald_probability(x, herald_efficiency, herald_dark)
    if p_post <= 0.0:
        raise HeraldingImpossibleError(
            f"herald probability is zero (x={x}, eta_A={herald_efficiency}, d_A={herald_dark})"
        )
    if x == 0:
        return vacuum_distribution(n_cut)

    k = np.arange(n_cut + 1)
    q = x / (1.0 + x)
    thermal = q**k / (1.0 + x)
    weights = thermal * (click_probability(k, herald_efficiency) + herald_dark)
    # Sum of the weights over k > n_cut, arranged so nothing cancels when
    # herald_efficiency or herald_dark is tiny.
    m = n_cut + 1
    eta_x = herald_efficiency * x
    tail_w = q**m * (herald_dark + (eta_x + click_probability(m, herald_efficiency)) / (1.0 + eta_x))

    probs = correlation_prob * weights / p_post
    probs[0] += 1.0 - correlation_prob
    tail = correlation_prob * tail_w / p_post
    return PhotonNumberDistribution(np.clip(probs, 0.0, 1.0), min(tail, 1.0))


class SourceKind(str, enum.Enum):
    WCS = "WCS"
    HSPS = "HSPS"


# GHz-class attenuated lasers vs MHz-class heralded SPDC sources.
DEFAULT_REPETITION_RATE = {SourceKind.WCS: 1e9, SourceKind.HSPS: 1e7}


@dataclass(frozen=True)
class SourceSpec:
    """Configuration of a photon source.

    The ``herald_*`` and ``correlation_prob`` fields only matter for HSPS.
    ``repetition_rate`` is in pulses per second (default by kind); for HSPS it
    counts heralded pulses, matching the per-herald normalization of the key
    rate.
    """

    kind: SourceKind = SourceKind.WCS
    mean_intensity: float = 0.1
    herald_efficiency: float = 0.5
    herald_dark: float = 1e-5
    correlation_prob: float = 0.7
    repetition_rate: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SourceKind(self.kind))
        if self.repetition_rate is None:
            object.__setattr__(self, "repetition_rate", DEFAULT_REPETITION_RATE[self.kind])
        if not math.isfinite(self.mean_intensity) or self.mean_intensity < 0:
            raise DomainError("mean_intensity must be >= 0")
        if not (math.isfinite(self.repetition_rate) and self.repetition_rate > 0):
            raise DomainError("repetition_rate must be > 0")
        if self.kind is SourceKind.HSPS:
            if not 0.0 <= self.herald_efficiency <= 1.0:
                raise DomainError("herald_efficiency must lie in [0, 1]")
            if not 0.0 <= self.herald_dark < 1.0:
                raise DomainError("herald_dark must lie in [0, 1)")
            if not 0.0 <= self.correlation_prob <= 1.0:
                raise DomainError("correlation_prob must lie in [0, 1]")

    def with_intensity(self, x: float) -> "SourceSpec":
        return dataclasses.replace(self, mean_intensity=x)

    def distribution(self, n_cut: int = DEFAULT_N_CUT) -> PhotonNumberDistribution:
        if self.kind is SourceKind.WCS:
            return wcs_distribution(self.mean_intensity, n_cut)
        return hsps_distribution(
            self.mean_intensity, self.herald_efficiency, self.herald_dark, self.correlation_prob, n_cut
        )


def single_photon_probability(spec: SourceSpec, n_cut: int = DEFAULT_N_CUT) -> float:
    return float(spec.distribution(n_cut).probs[1])


@dataclass(frozen=True)
class SourceStatistics:
    mean: float
    variance: float
    g2_zero: float
    fano: float


def source_statistics(dist: PhotonNumberDistribution) -> SourceStatistics:
    """Moments of the resolved part of ``dist`` (the tail is ignored)."""
    p = dist.probs
    k = np.arange(p.size, dtype=float)
    mean = float(np.dot(k, p))
    second = float(np.dot(k * k, p))
    factorial2 = float(np.dot(k * (k - 1.0), p))
    variance = max(second - mean * mean, 0.0)
    if mean > 0:
        return SourceStatistics(mean, variance, factorial2 / mean**2, variance / mean)
    return SourceStatistics(0.0, variance, 0.0, 1.0)


def crossover_mean(
    source: SourceSpec,
    n_cut: int = DEFAULT_N_CUT,
    bracket: Sequence[float] = (0.1, 1.0),
    tol: float = 1e-4,
) -> float:
    """Mean photon number where ``source`` and a WCS emit single photons equally often."""
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0 <= lo < hi:
        raise BracketError(f"invalid bracket {bracket!r}")

    def diff(x: float) -> float:
        p_src = single_photon_probability(source.with_intensity(x), n_cut)
        return p_src - float(wcs_distribution(x, n_cut).probs[1])

    f_lo, f_hi = diff(lo), diff(hi)
    if not f_lo * f_hi < 0:
        raise BracketError(f"no sign change of P1 difference on [{lo}, {hi}] ({f_lo:.3g}, {f_hi:.3g})")
    return float(optimize.bisect(diff, lo, hi, xtol=tol))

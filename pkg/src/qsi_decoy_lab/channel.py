"""Lossy channel and threshold receiver: yields, error rates, gain and QBER."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NoSignalError, UndefinedErrorRate
from .photon_sources import PhotonNumberDistribution, click_probability

BACKGROUND_ERROR = 0.5


@dataclass(frozen=True)
class ChannelSpec:
    """Channel loss plus receiver.

    ``y0`` is the combined background/dark click probability per gate and
    ``e_det`` the misalignment error probability of a signal click.
    """

    loss_db: float = 10.0
    eta_b: float = 1.0
    y0: float = 1e-6
    e_det: float = 0.01

    def __post_init__(self) -> None:
        if not (math.isfinite(self.loss_db) and self.loss_db >= 0):
            raise DomainError(f"loss_db must be >= 0, got {self.loss_db!r}")
        if not 0.0 < self.eta_b <= 1.0:
            raise DomainError(f"eta_b must lie in (0, 1], got {self.eta_b!r}")
        if not 0.0 <= self.y0 < 1.0:
            raise DomainError(f"y0 must lie in [0, 1), got {self.y0!r}")
        if not 0.0 <= self.e_det <= 0.5:
            raise DomainError(f"e_det must lie in [0, 0.5], got {self.e_det!r}")

    @property
    def e0(self) -> float:
        return BACKGROUND_ERROR

    @property
    def transmittance(self) -> float:
        return transmittance(self.loss_db, self.eta_b)

    def to_dict(self) -> dict:
        return {"loss_db": self.loss_db, "eta_b": self.eta_b, "y0": self.y0, "e_det": self.e_det}


@dataclass(frozen=True)
class GainQber:
    gain: float
    qber: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.gain <= 1.0:
            raise DomainError(f"gain {self.gain!r} outside [0, 1]")
        if not 0.0 <= self.qber <= 0.5:
            raise DomainError(f"qber {self.qber!r} outside [0, 0.5]")


def transmittance(loss_db: float, eta_b: float = 1.0) -> float:
    if not (math.isfinite(loss_db) and loss_db >= 0):
        raise DomainError(f"loss_db must be >= 0, got {loss_db!r}")
    if not 0.0 < eta_b <= 1.0:
        raise DomainError(f"eta_b must lie in (0, 1], got {eta_b!r}")
    return eta_b * 10.0 ** (-loss_db / 10.0)


def yield_n(n, eta: float, y0: float):
    """Click probability for an n-photon pulse; vectorized over ``n``.

    Evaluated as y0 + (1 - y0)(1 - (1 - eta)^n), which equals
    1 - (1 - y0)(1 - eta)^n but keeps full precision when y0 or eta is tiny.
    """
    y = y0 + (1.0 - y0) * click_probability(n, eta)
    return float(y) if np.ndim(n) == 0 else y


def error_n(n, eta: float, y0: float, e_det: float):
    """Error probability of a click given n photons, clamped to [0, 0.5]."""
    signal = click_probability(n, eta)
    y = y0 + (1.0 - y0) * signal
    if np.any(y <= 0.0):
        raise UndefinedErrorRate(f"yield is zero for n={n!r} (eta={eta}, y0={y0})")
    e = (BACKGROUND_ERROR * y0 + e_det * signal) / y
    e = np.clip(e, 0.0, 0.5)
    return float(e) if np.ndim(n) == 0 else e


def gain_and_qber(dist: PhotonNumberDistribution, ch: ChannelSpec) -> GainQber:
    """Expected gain and QBER; tail photons get the yield and error of n_cut."""
    eta = ch.transmittance
    k = np.arange(dist.n_cut + 1)
    signal = click_probability(k, eta)
    y = ch.y0 + (1.0 - ch.y0) * signal
    # Unclamped errored yield e_k*Y_k; clamping only bites when e_det > 0.5 - tiny.
    ey = np.minimum(BACKGROUND_ERROR * ch.y0 + ch.e_det * signal, 0.5 * y)

    gain = float(np.dot(dist.probs, y) + dist.tail_mass * y[-1])
    if gain <= 0.0:
        raise NoSignalError("overall gain is zero")
    errored = float(np.dot(dist.probs, ey) + dist.tail_mass * ey[-1])
    return GainQber(min(gain, 1.0), min(max(errored / gain, 0.0), 0.5))

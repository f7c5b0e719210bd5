"""Decoy-state estimation of single-photon yield/error and the secure key rate.

Two estimators are provided. ``decoy_bounds_analytic_wcs`` is the closed-form
vacuum+weak bound valid for Poissonian sources only. ``decoy_bounds_lp``
solves small linear programs over the truncated yields and works for any
photon statistics, which is what HSPS decoys require: changing the pump
intensity changes the whole post-selected distribution, not just its mean.

Rates are asymptotic (no finite-key corrections) and expressed per pulse; for
HSPS a "pulse" is a heralded pulse.
"""
from __future__ import annotations

import enum
import itertools
import math
from fractions import Fraction
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .channel import ChannelSpec, GainQber, gain_and_qber
from .errors import DegenerateIntensitiesError, DomainError, NoSignalError
from .photon_sources import (
    PhotonNumberDistribution,
    SourceKind,
    SourceSpec,
    vacuum_distribution,
)

LP_RESIDUAL_TOL = 1e-12
TINY_COEFFICIENT = 1e-9
MAX_BASES = 500
APPROX_REL = 1e-9
CERTIFIED_DUALS = 3
# Distances from a box bound at which a solver value counts as on the bound.
FIXED_TOLERANCES = (1e-7, 1e-10)
# Tightest feasibility tolerances HiGHS accepts; certification does the rest.
HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
DEFAULT_LP_N_CUT = 15


def binary_entropy(p):
    """Binary Shannon entropy in bits; vectorized, with H(0) = H(1) = 0."""
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr < 0) | (p_arr > 1)) or np.any(np.isnan(p_arr)):
        raise DomainError(f"binary entropy needs p in [0, 1], got {p!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -p_arr * np.log2(p_arr) - (1 - p_arr) * np.log2(1 - p_arr)
    h = np.where((p_arr == 0) | (p_arr == 1), 0.0, h)
    return float(h) if h.ndim == 0 else h


class EstimationMethod(str, enum.Enum):
    ANALYTIC = "analytic"
    LP = "lp"


@dataclass(frozen=True)
class DecoyProtocolSpec:
    signal_intensity: float = 0.1
    decoy_intensities: tuple[float, ...] = (0.001, 0.0)
    q_factor: float = 0.5
    f_ec: float = 1.16
    estimation_method: EstimationMethod = EstimationMethod.LP
    n_cut: int = DEFAULT_LP_N_CUT

    def __post_init__(self) -> None:
        object.__setattr__(self, "decoy_intensities", tuple(float(v) for v in self.decoy_intensities))
        object.__setattr__(self, "estimation_method", EstimationMethod(self.estimation_method))
        mu = self.signal_intensity
        if not (math.isfinite(mu) and mu > 0):
            raise DomainError("signal_intensity must be > 0")
        for nu in self.decoy_intensities:
            if not 0.0 <= nu < mu:
                raise DegenerateIntensitiesError(f"decoy {nu} must satisfy 0 <= nu < mu = {mu}")
        if not 0.0 < self.q_factor <= 1.0:
            raise DomainError("q_factor must lie in (0, 1]")
        if not self.f_ec >= 1.0:
            raise DomainError("f_ec must be >= 1")
        if int(self.n_cut) != self.n_cut or self.n_cut < 2:
            raise DomainError("n_cut must be an integer >= 2")

    @property
    def intensities(self) -> tuple[float, ...]:
        return (self.signal_intensity, *self.decoy_intensities)

    @property
    def weak_decoy(self) -> float:
        """Largest nonzero decoy, or 0 when only vacuum decoys are used."""
        return max((v for v in self.decoy_intensities if v > 0), default=0.0)


@dataclass(frozen=True)
class DecoyBounds:
    y1_lower: float
    e1_upper: float
    feasible: bool = True
    z1_upper: float = 0.0
    diagnostic: str = ""
    # LP bounds are weak-duality certificates, hence always on the secure side.
    # The gaps bound how far each lies from the LP optimum (inf if no exactly
    # feasible vertex was found); zero for the analytic estimator.
    y1_gap: float = 0.0
    z1_gap: float = 0.0

    @property
    def approximate(self) -> bool:
        """True when a bound may be looser than the LP optimum by more than 1e-9 relative."""
        return self.y1_gap > APPROX_REL * self.y1_lower or self.z1_gap > APPROX_REL * max(self.z1_upper, 1e-300)


@dataclass(frozen=True)
class KeyRateResult:
    q_signal: GainQber
    y1_lower: float
    q1_lower: float
    e1_upper: float
    rate: float
    feasible: bool
    diagnostic: str = ""

    def to_dict(self) -> dict:
        return {
            "Q_mu": self.q_signal.gain,
            "E_mu": self.q_signal.qber,
            "y1_lower": self.y1_lower,
            "q1_lower": self.q1_lower,
            "e1_upper": self.e1_upper,
            "rate": self.rate,
            "feasible": self.feasible,
            "diagnostic": self.diagnostic,
        }

    def csv_row(self, loss_db: float, mu: float, nu: float) -> list[float]:
        """Row in the order loss_db, mu, nu, Q_mu, E_mu, Y1_L, e1_U, rate."""
        return [loss_db, mu, nu, self.q_signal.gain, self.q_signal.qber, self.y1_lower, self.e1_upper, self.rate]


CSV_HEADER = ["loss_db", "mu", "nu", "Q_mu", "E_mu", "Y1_L", "e1_U", "rate"]


def decoy_bounds_analytic_wcs(
    signal: GainQber, decoy: GainQber, mu: float, nu: float, y0: float
) -> tuple[float, float, float]:
    """Vacuum+weak decoy bounds for a Poissonian source.

    Returns ``(y1_lower, q1_lower, e1_upper)``. A zero yield bound means no
    single-photon contribution can be certified; ``e1_upper`` is then 0.5.
    """
    denom = mu * nu - nu * nu
    if not (0 < nu < mu) or denom <= 0:
        raise DegenerateIntensitiesError(f"need 0 < nu < mu, got mu={mu}, nu={nu}")
    y1 = (mu / denom) * (
        decoy.gain * math.exp(nu)
        - signal.gain * math.exp(mu) * nu * nu / (mu * mu)
        - (mu * mu - nu * nu) / (mu * mu) * y0
    )
    y1 = min(max(y1, 0.0), 1.0)
    q1 = y1 * mu * math.exp(-mu)
    if y1 <= 0:
        return 0.0, 0.0, 0.5
    e1 = (decoy.qber * decoy.gain * math.exp(nu) - 0.5 * y0) / (y1 * nu)
    return y1, q1, min(max(e1, 0.0), 0.5)


def _truncate(dist: PhotonNumberDistribution, n_cut: int) -> tuple[np.ndarray, float]:
    p = dist.probs
    if p.size > n_cut + 1:
        return p[: n_cut + 1].copy(), dist.tail_mass + float(p[n_cut + 1 :].sum())
    return np.pad(p, (0, n_cut + 1 - p.size)), dist.tail_mass


def _dual_bound(lam: np.ndarray, a_ub: np.ndarray, b_ub: np.ndarray, c: np.ndarray, exact: bool = True) -> float:
    """Weak-duality lower bound on min{c.x : A x <= b, 0 <= x <= 1} for multipliers ``lam``.

    Any ``lam >= 0`` gives a valid bound. With ``exact`` the bound is evaluated
    in rational arithmetic (floats are exact rationals) and rounded down, so
    it holds as returned; otherwise it is a float estimate for ranking.
    """
    lam = np.maximum(np.nan_to_num(lam, nan=0.0, posinf=0.0, neginf=0.0), 0.0)
    if not exact:
        return float(-lam @ b_ub + np.minimum(c + a_ub.T @ lam, 0.0).sum())
    rows = np.flatnonzero(lam)
    weights = [Fraction(float(lam[i])) for i in rows]
    total = -sum((w * Fraction(float(b_ub[i])) for w, i in zip(weights, rows)), Fraction(0))
    for j in range(c.size):
        reduced = Fraction(float(c[j])) + sum((w * Fraction(float(a_ub[i, j])) for w, i in zip(weights, rows)), Fraction(0))
        if reduced < 0:
            total += reduced
    value = float(total)
    return math.nextafter(value, -math.inf) if Fraction(value) > total else value


def _refine_multipliers(lam: np.ndarray, a_ub: np.ndarray, c: np.ndarray, free: np.ndarray, steps: int = 2) -> np.ndarray:
    """Iterative refinement of ``lam`` toward zero reduced cost on the ``free`` columns.

    The residual is computed exactly, so the corrections remove the rounding
    left by the float solve; a free column's leftover negative reduced cost
    otherwise costs its full size in the dual bound.
    """
    rows = np.flatnonzero(lam > 0)
    if rows.size == 0 or free.size == 0:
        return lam
    lam = lam.copy()
    block = a_ub[np.ix_(rows, free)]
    for _ in range(steps):
        weights = [Fraction(float(lam[i])) for i in rows]
        residual = np.array([
            float(Fraction(float(c[j])) + sum(w * Fraction(float(a_ub[i, j])) for w, i in zip(weights, rows)))
            for j in free
        ])
        if not np.any(residual):
            break
        step, *_ = np.linalg.lstsq(block.T, -residual, rcond=None)
        lam[rows] = np.maximum(lam[rows] + step, 0.0)
    return lam


def _certify(
    x: np.ndarray, lam: np.ndarray, a_ub: np.ndarray, b_ub: np.ndarray, c: np.ndarray
) -> tuple[float, float]:
    """Certified min of c.x near the solver's vertex ``x`` with multipliers ``lam``.

    For each threshold in ``FIXED_TOLERANCES``, variables that close to a box
    bound stay there; each square subset of the active rows (a basis) then
    yields an exact primal vertex and the multipliers that zero the free
    variables' reduced costs. Returns the best dual bound and the best
    objective among vertices meeting every row to ``LP_RESIDUAL_TOL``
    (``inf`` if none does).
    """
    duals = [(lam, np.flatnonzero((x > 0.0) & (x < 1.0)))]
    primals = [x]
    for tol in FIXED_TOLERANCES:
        at_hi = x >= 1.0 - tol
        fixed = (x <= tol) | at_hi
        free = np.flatnonzero(~fixed)
        base = np.where(at_hi, 1.0, 0.0)
        active = np.flatnonzero(b_ub - a_ub @ x <= tol)
        if free.size == 0:
            primals.append(base)
            continue
        if active.size < free.size or math.comb(active.size, free.size) > MAX_BASES:
            continue
        for rows in itertools.combinations(active, free.size):
            rows = list(rows)
            square = a_ub[np.ix_(rows, free)]
            if np.linalg.matrix_rank(square) < free.size:
                continue
            multipliers = np.zeros(b_ub.size)
            multipliers[rows] = np.linalg.solve(square.T, -c[free])
            duals.append((multipliers, free))
            # Besides the solver's bounds, try each fixed variable at the bound
            # its reduced cost favours; that vertex attains this basis' dual bound.
            reduced = c + a_ub.T @ multipliers
            favoured = np.where(reduced < 0, 1.0, np.where(reduced > 0, 0.0, base))
            for bounds in (base, np.where(fixed, favoured, 0.0)):
                vertex = bounds.copy()
                vertex[free] = np.linalg.solve(square, b_ub[rows] - a_ub[rows] @ bounds)
                primals.append(vertex)

    def admissible(v: np.ndarray) -> bool:
        inside = np.all(v >= -LP_RESIDUAL_TOL) and np.all(v <= 1 + LP_RESIDUAL_TOL)
        return bool(inside and np.all(a_ub @ np.clip(v, 0.0, 1.0) - b_ub <= LP_RESIDUAL_TOL))

    # Rank the multipliers in floating point, then certify the best few exactly.
    duals.sort(key=lambda d: _dual_bound(d[0], a_ub, b_ub, c, exact=False), reverse=True)
    best = [m for m, _ in duals[:CERTIFIED_DUALS]]
    best += [_refine_multipliers(m, a_ub, c, free) for m, free in duals[:CERTIFIED_DUALS]]
    dual = max(_dual_bound(m, a_ub, b_ub, c) for m in best)
    feasible = [float(c @ np.clip(v, 0.0, 1.0)) for v in primals if admissible(v)]
    return dual, min(feasible, default=math.inf)


def _gain_rows(
    probs: list[np.ndarray], tails: list[float], targets: list[float], fold_below: float
) -> tuple[np.ndarray, np.ndarray]:
    """Rows of t_i - tail_i <= P_i.v <= t_i, scaled by 1/t_i.

    Components k >= 2 whose scaled weight is below ``fold_below`` join the tail.
    """
    rows, rhs = [], []
    for p, tail, t in zip(probs, tails, targets):
        # 1/t overflows for subnormal targets; leave those rows unscaled.
        scale = 1.0 / t if t >= np.finfo(float).tiny else 1.0
        tiny = p * scale < fold_below
        tiny[:2] = False
        tail = tail + float(p[tiny].sum())
        p = np.where(tiny, 0.0, p)
        rows.append(p * scale)
        rhs.append(t * scale)
        rows.append(-p * scale)
        rhs.append(-(t - tail) * scale)
    return np.array(rows), np.array(rhs)


def _solve(c: np.ndarray, a_ub: np.ndarray, b_ub: np.ndarray):
    bounds = [(0.0, 1.0)] * c.size
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs-ds", options=HIGHS_OPTIONS)
    if res.status == 2:
        # Presolve can declare infeasibility when the measured gains sit exactly
        # on the box boundary (lossless channel); confirm without it.
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs-ds", options={**HIGHS_OPTIONS, "presolve": False})
    return res


def _extremal_component(
    probs: list[np.ndarray], tails: list[float], targets: list[float], maximize: bool
) -> tuple[float | None, float]:
    """Extremize v[1] over {0 <= v <= 1, t_i - tail_i <= P_i.v <= t_i}.

    Rows are scaled by 1/t_i so residuals are relative. Returns a certified
    bound on the extremum (``None`` when the polytope is empty) and an upper
    limit on its distance from the LP optimum.
    """
    a_ub, b_ub = _gain_rows(probs, tails, targets, fold_below=0.0)
    c = np.zeros(probs[0].size)
    c[1] = -1.0 if maximize else 1.0
    res = _solve(c, a_ub, b_ub)
    if res.status != 0:
        # HiGHS silently drops matrix entries below ~1e-9, which can empty the
        # ulp-thin feasible sets of near-lossless channels. Retry with those
        # components in the tail (a relaxation); certification below still
        # works against the exact rows.
        res = _solve(c, *_gain_rows(probs, tails, targets, fold_below=TINY_COEFFICIENT))
    if res.status == 2:
        return None, math.inf
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    # HiGHS reports d(objective)/d(b) <= 0 for <= rows; the multipliers are its negation.
    lam = -np.asarray(res.ineqlin.marginals) if res.ineqlin.marginals.size == b_ub.size else np.zeros(b_ub.size)
    dual, primal = _certify(np.clip(res.x, 0.0, 1.0), lam, a_ub, b_ub, c)
    if maximize:
        value = min(max(-dual, 0.0), 1.0)
        return value, max(value + primal, 0.0)
    value = min(max(dual, 0.0), 1.0)
    return value, max(primal - value, 0.0)


def decoy_bounds_lp(
    dists: Sequence[PhotonNumberDistribution],
    gains: Sequence[GainQber],
    n_cut: int = DEFAULT_LP_N_CUT,
) -> DecoyBounds:
    """Linear-program bounds on Y1 (lower) and e1 (upper) for arbitrary statistics.

    Yields ``Y_k`` and errored yields ``Z_k = e_k Y_k`` are free in [0, 1] for
    k <= n_cut. Photons above n_cut contribute anything between 0 and their
    tail mass to each measured gain, which keeps both bounds on the secure side.
    """
    if len(dists) != len(gains) or len(dists) < 1:
        raise DomainError("need one gain per distribution")
    if int(n_cut) != n_cut or n_cut < 2:
        raise DomainError("n_cut must be an integer >= 2")
    truncated = [_truncate(d, n_cut) for d in dists]
    probs = [t[0] for t in truncated]
    tails = [t[1] for t in truncated]

    if all(p[1] <= 0 for p in probs):
        return DecoyBounds(0.0, 0.5, True, 0.0, "insufficient constraints: no single-photon weight")

    y1, y1_gap = _extremal_component(probs, tails, [g.gain for g in gains], maximize=False)
    if y1 is None:
        return DecoyBounds(0.0, 0.5, False, 0.0, "infeasible yield constraints")
    z1, z1_gap = _extremal_component(probs, tails, [g.gain * g.qber for g in gains], maximize=True)
    if z1 is None:
        return DecoyBounds(y1, 0.5, False, 0.0, "infeasible error constraints", y1_gap)
    if y1 <= 0:
        return DecoyBounds(0.0, 0.5, True, z1, "single-photon yield bound is zero", y1_gap, z1_gap)
    return DecoyBounds(y1, min(z1 / y1, 0.5), True, z1, "", y1_gap, z1_gap)


def key_rate_from_bounds(q_factor: float, f_ec: float, q1: float, e1: float, signal: GainQber) -> float:
    """Secure rate per pulse, clamped at zero."""
    value = q1 * (1.0 - binary_entropy(e1)) - signal.gain * f_ec * binary_entropy(signal.qber)
    return max(0.0, q_factor * value)


def intensity_distribution(source: SourceSpec, x: float, n_cut: int) -> PhotonNumberDistribution:
    """Photon statistics emitted at intensity ``x``; zero means a vacuum pulse."""
    if x == 0:
        return vacuum_distribution(n_cut)
    return source.with_intensity(x).distribution(n_cut)


def _measured(dist: PhotonNumberDistribution, ch: ChannelSpec) -> GainQber:
    # A silent intensity (e.g. vacuum decoy without background) is a valid measurement.
    try:
        return gain_and_qber(dist, ch)
    except NoSignalError:
        return GainQber(0.0, 0.0)


def secure_key_rate(spec: DecoyProtocolSpec, source: SourceSpec, ch: ChannelSpec) -> KeyRateResult:
    dists = [intensity_distribution(source, x, spec.n_cut) for x in spec.intensities]
    gains = [_measured(d, ch) for d in dists]
    signal = gains[0]
    if signal.gain <= 0:
        return KeyRateResult(signal, 0.0, 0.0, 0.5, 0.0, False, "no signal clicks")

    if spec.estimation_method is EstimationMethod.ANALYTIC:
        if source.kind is not SourceKind.WCS:
            raise DomainError("analytic vacuum+weak bounds assume Poissonian (WCS) statistics")
        decoys = spec.decoy_intensities
        if len(decoys) != 2 or 0.0 not in decoys or spec.weak_decoy <= 0:
            raise DegenerateIntensitiesError("analytic estimator needs decoys [nu, 0]")
        i_nu = 1 + decoys.index(spec.weak_decoy)
        i_vac = 1 + decoys.index(0.0)
        y1, q1, e1 = decoy_bounds_analytic_wcs(
            signal, gains[i_nu], spec.signal_intensity, spec.weak_decoy, gains[i_vac].gain
        )
        bounds = DecoyBounds(y1, e1, y1 > 0, diagnostic="" if y1 > 0 else "single-photon yield bound is zero")
    else:
        bounds = decoy_bounds_lp(dists, gains, spec.n_cut)
        q1 = bounds.y1_lower * float(dists[0].probs[1])

    if not bounds.feasible:
        return KeyRateResult(signal, bounds.y1_lower, 0.0, bounds.e1_upper, 0.0, False, bounds.diagnostic)
    rate = key_rate_from_bounds(spec.q_factor, spec.f_ec, q1, bounds.e1_upper, signal)
    return KeyRateResult(signal, bounds.y1_lower, q1, bounds.e1_upper, rate, True, bounds.diagnostic)


def throughput_fom(rate_per_pulse: float, repetition_rate: float) -> float:
    """Secure bits per second."""
    if rate_per_pulse < 0:
        raise DomainError("rate_per_pulse must be >= 0")
    if not repetition_rate > 0:
        raise DomainError("repetition_rate must be > 0")
    return rate_per_pulse * repetition_rate

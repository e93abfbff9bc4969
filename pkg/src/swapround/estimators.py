"""IPW point estimators, the swap-trace variance estimator and normal intervals.

Array helpers at the bottom accept a leading batch axis so Monte Carlo code
can evaluate thousands of draws at once; the study-level functions wrap them.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional, Tuple

import numpy as np

from .core import (
    EMPTY_TRACE,
    AssignmentDraw,
    DegenerateWeight,
    DimensionMismatch,
    EmptyArm,
    EstimateReport,
    OutcomeTable,
    SwapRoundError,
    SwapTrace,
    pair_covariance_array,
)


class InvalidLevel(SwapRoundError, ValueError):
    pass


@dataclass(frozen=True)
class ObservedStudy:
    """One realized experiment.

    ``weights`` are the probabilities used for inverse weighting; ``target``
    (defaults to ``weights``) is the design's ``p0``, used when the pairwise
    covariance is evaluated at the target rather than at swap time.
    """

    assignment: np.ndarray
    outcomes: np.ndarray
    weights: np.ndarray
    trace: SwapTrace = EMPTY_TRACE
    mechanism: Optional[str] = None
    target: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.assignment)
        if len(self.outcomes) != n or len(self.weights) != n:
            raise DimensionMismatch("assignment, outcomes and weights must have equal length")

    @property
    def n(self) -> int:
        return len(self.assignment)


def observe(draw: AssignmentDraw, outcomes: OutcomeTable, p0=None) -> ObservedStudy:
    """Reveal ``Y = Y(A)`` for a draw and pick its weights.

    Re-randomized draws are weighted by their effective propensities, everything
    else by ``p0``.
    """
    a = np.asarray(draw.assignment)
    y = outcomes.observed(a)
    if draw.effective_p is not None:
        w = np.asarray(draw.effective_p, dtype=float)
    elif p0 is None:
        raise ValueError("p0 is required unless the draw carries effective propensities")
    else:
        w = np.asarray(p0, dtype=float)
    target = np.asarray(p0, dtype=float) if p0 is not None else None
    return ObservedStudy(a, y, w, draw.trace, str(getattr(draw.mechanism, "value", draw.mechanism)), target)


def _check_weights(a, p):
    if np.any((a == 1) & (p <= 0)) or np.any((a == 0) & (p >= 1)):
        raise DegenerateWeight("a realized unit has weight 1/0")


def _arm_terms(a, y, p):
    """Per-unit ``A Y / p`` and ``(1 - A) Y / (1 - p)`` with unrealized branches set to 0."""
    treated = a == 1
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(treated, y / p, 0.0)
        t0 = np.where(treated, 0.0, y / (1.0 - p))
    return t1, t0


def ipw_values(a, y, p) -> np.ndarray:
    """Horvitz-Thompson IPW estimates along the last axis."""
    a, y, p = np.asarray(a), np.asarray(y, dtype=float), np.asarray(p, dtype=float)
    _check_weights(a, p)
    t1, t0 = _arm_terms(a, y, p)
    return np.mean(t1 - t0, axis=-1)


def self_normalized_values(a, y, p) -> np.ndarray:
    a, y, p = np.asarray(a), np.asarray(y, dtype=float), np.asarray(p, dtype=float)
    _check_weights(a, p)
    treated = a == 1
    if np.any(treated.sum(axis=-1) == 0) or np.any((~treated).sum(axis=-1) == 0):
        raise EmptyArm("self-normalized IPW needs both arms nonempty")
    with np.errstate(divide="ignore", invalid="ignore"):
        w1 = np.where(treated, 1.0 / p, 0.0)
        w0 = np.where(treated, 0.0, 1.0 / (1.0 - p))
    return (w1 * y).sum(axis=-1) / w1.sum(axis=-1) - (w0 * y).sum(axis=-1) / w0.sum(axis=-1)


def _hajek_means(a, y, p):
    treated = a == 1
    with np.errstate(divide="ignore", invalid="ignore"):
        w1 = np.where(treated, 1.0 / p, 0.0)
        w0 = np.where(treated, 0.0, 1.0 / (1.0 - p))
    s1, s0 = w1.sum(axis=-1), w0.sum(axis=-1)
    m1 = np.divide((w1 * y).sum(axis=-1), s1, out=np.zeros_like(s1), where=s1 > 0)
    m0 = np.divide((w0 * y).sum(axis=-1), s0, out=np.zeros_like(s0), where=s0 > 0)
    return m1, m0


def variance_values(a, y, p, pair_rows, pair_left, pair_right, pre_left, pre_right,
                    target=None, rho_from: str = "target", pair_weights: str = "population"):
    """Unclamped variance estimates for a batch of draws.

    ``a, y, p`` are ``(R, n)``. Swaps are given as flat arrays: swap ``s``
    belongs to draw ``pair_rows[s]`` and joins units ``pair_left[s]`` and
    ``pair_right[s]`` whose live probabilities were ``pre_left[s], pre_right[s]``.

    ``rho_from`` selects where the pair covariance is evaluated: ``"target"``
    (``target`` / ``p`` entries, the default) or ``"swap"`` (live values at the swap).
    ``pair_weights`` selects the pair factor: ``"population"`` uses
    ``m1 / p_i + m0 / (1 - p_i)`` with Hajek arm means ``m1, m0``;
    ``"observed"`` uses the unit's own ``A Y / p + (1 - A) Y / (1 - p)``.
    """
    a = np.atleast_2d(a)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    p = np.broadcast_to(np.asarray(p, dtype=float), a.shape)
    _check_weights(a, p)
    n = a.shape[-1]
    t1, t0 = _arm_terms(a, y, p)
    tau = np.mean(t1 - t0, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.where(a == 1, y**2 / p**2, y**2 / (1.0 - p) ** 2)
    total = sq.sum(axis=-1) - n * tau**2

    pair_rows = np.asarray(pair_rows, dtype=np.int64)
    if pair_rows.size:
        pl = np.asarray(pair_left, dtype=np.int64)
        pr = np.asarray(pair_right, dtype=np.int64)
        if rho_from == "swap":
            rho = pair_covariance_array(pre_left, pre_right)
        elif rho_from == "target":
            tgt = p if target is None else np.broadcast_to(np.asarray(target, dtype=float), a.shape)
            rho = pair_covariance_array(tgt[pair_rows, pl], tgt[pair_rows, pr])
        else:
            raise ValueError(f"unknown rho_from {rho_from!r}")
        if pair_weights == "population":
            m1, m0 = _hajek_means(a, y, p)
            pi, pj = p[pair_rows, pl], p[pair_rows, pr]
            fi = m1[pair_rows] / pi + m0[pair_rows] / (1.0 - pi)
            fj = m1[pair_rows] / pj + m0[pair_rows] / (1.0 - pj)
        elif pair_weights == "observed":
            f = t1 + t0
            fi, fj = f[pair_rows, pl], f[pair_rows, pr]
        else:
            raise ValueError(f"unknown pair_weights {pair_weights!r}")
        total = total + 2.0 * np.bincount(pair_rows, weights=rho * fi * fj, minlength=a.shape[0])
    return total / n**2


def ipw_estimate(study: ObservedStudy) -> float:
    """Horvitz-Thompson IPW estimate of the average treatment effect."""
    return float(ipw_values(study.assignment, study.outcomes, study.weights))


def self_normalized_ipw(study: ObservedStudy) -> float:
    """Hajek-style IPW: arm means with normalized inverse weights."""
    return float(self_normalized_values(study.assignment, study.outcomes, study.weights))


def raw_variance_estimate(study: ObservedStudy, rho_from: str = "target",
                          pair_weights: str = "population") -> float:
    """The variance estimate before clamping at zero (may be negative)."""
    tr = study.trace
    pairs, pre = tr.pairs, tr.pre_values
    rows = np.zeros(len(pairs), dtype=np.int64)
    val = variance_values(study.assignment, study.outcomes, study.weights, rows,
                          pairs[:, 0], pairs[:, 1], pre[:, 0], pre[:, 1],
                          target=study.target, rho_from=rho_from, pair_weights=pair_weights)
    return float(val[0])


def variance_estimate(study: ObservedStudy, rho_from: str = "target",
                      pair_weights: str = "population") -> float:
    """Estimated variance of :func:`ipw_estimate`, clamped at zero.

    The diagonal part is the unbiased IPW estimate of the per-unit second
    moments minus ``n * tau_hat**2``; each recorded swap then adds twice its
    indicator covariance times the product of the two units' effective weights.
    """
    return max(raw_variance_estimate(study, rho_from, pair_weights), 0.0)


def normal_quantile(q: float) -> float:
    return NormalDist().inv_cdf(q)


def confidence_interval(tau_hat: float, sigma_hat_sq: float, alpha: float = 0.05) -> Tuple[float, float]:
    """Two-sided normal interval ``tau_hat +/- z * sqrt(sigma_hat_sq)``.

    ``sigma_hat_sq`` is taken to be the variance of ``tau_hat`` itself.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidLevel(f"alpha must lie in (0, 1), got {alpha!r}")
    if sigma_hat_sq < 0:
        raise ValueError("sigma_hat_sq must be nonnegative")
    half = normal_quantile(1.0 - alpha / 2.0) * float(np.sqrt(sigma_hat_sq))
    return tau_hat - half, tau_hat + half


def ht_uniform_estimate(y, a, n: int, budget: int) -> float:
    """IPW with the simple-random-sampling inclusion probability ``B / n`` for every unit."""
    if budget <= 0 or budget >= n:
        raise DegenerateWeight(f"uniform weights need 0 < B < n, got B={budget}, n={n}")
    a = np.asarray(a)
    if len(a) != n:
        raise DimensionMismatch("assignment length differs from n")
    return float(ipw_values(a, y, np.full(n, budget / n)))


def estimate(study: ObservedStudy, alpha: float = 0.05, estimator: str = "ipw",
             **variance_kw) -> EstimateReport:
    """Point estimate, variance estimate and interval in one report."""
    if estimator == "ipw":
        tau = ipw_estimate(study)
    elif estimator == "self_normalized":
        tau = self_normalized_ipw(study)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    raw = raw_variance_estimate(study, **variance_kw)
    sig = max(raw, 0.0)
    lo, hi = confidence_interval(tau, sig, alpha)
    return EstimateReport(tau, sig, lo, hi, alpha, study.n, f"{study.mechanism}/{estimator}",
                          clamped=raw < 0)

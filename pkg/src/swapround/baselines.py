"""Comparison assignment mechanisms: Bernoulli, rejection, SRS, re-randomization."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    AssignmentDraw,
    DesignSpec,
    DimensionMismatch,
    Mechanism,
    OutOfRange,
    SwapRoundError,
    as_rng,
)

log = logging.getLogger(__name__)


class RejectionLimitExceeded(SwapRoundError, RuntimeError):
    pass


class SingularCovariance(SwapRoundError, ValueError):
    pass


@dataclass(frozen=True)
class RerandConfig:
    candidates: int = 100
    effective_p_replications: int = 1000
    selection: str = "min_mahalanobis"
    max_redraws: int = 100

    def __post_init__(self):
        if self.candidates < 1:
            raise ValueError("need at least one candidate")
        if self.effective_p_replications < 100:
            raise ValueError("effective propensities need at least 100 replications")
        if self.selection != "min_mahalanobis":
            raise ValueError(f"unknown selection rule {self.selection!r}")


def _probs(p0) -> np.ndarray:
    p = np.asarray(p0, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise OutOfRange("probabilities must lie in [0, 1]")
    return p


def bernoulli_assign(p0, rng=None) -> AssignmentDraw:
    """Independent coins; the number treated is random."""
    p = _probs(p0)
    a = (as_rng(rng).random(len(p)) < p).astype(np.int8)
    return AssignmentDraw(assignment=a, mechanism=Mechanism.BERNOULLI)


def rejection_budget_assign(p0, budget: int, rng=None, max_tries: int = 10**5) -> AssignmentDraw:
    """Redraw independent coins until exactly ``budget`` units are treated.

    The accepted draw follows the conditional law given the count, so its
    marginals generally differ from ``p0``.
    """
    p = _probs(p0)
    n = len(p)
    if not 0 <= budget <= n:
        raise OutOfRange(f"budget {budget} outside [0, {n}]")
    rng = as_rng(rng)
    for t in range(1, max_tries + 1):
        a = rng.random(n) < p
        if a.sum() == budget:
            return AssignmentDraw(assignment=a.astype(np.int8), mechanism=Mechanism.REJECTION_BUDGET, tries=t)
    raise RejectionLimitExceeded(f"no draw with {budget} treated units in {max_tries} tries")


def srs_assign(n: int, budget: int, rng=None) -> AssignmentDraw:
    """Treat a uniformly random subset of exactly ``budget`` units."""
    if not 0 <= budget <= n:
        raise OutOfRange(f"budget {budget} outside [0, {n}]")
    a = np.zeros(n, dtype=np.int8)
    a[as_rng(rng).choice(n, size=budget, replace=False)] = 1
    return AssignmentDraw(assignment=a, mechanism=Mechanism.SRS)


def _precision_matrix(V: np.ndarray) -> np.ndarray:
    """Inverse of the pooled covariate covariance, ridge-regularized when ill-conditioned."""
    k = V.shape[1]
    S = np.atleast_2d(np.cov(V, rowvar=False))
    if np.linalg.cond(S) > 1e12:
        S = S + 1e-8 * max(np.trace(S), 1e-300) / k * np.eye(k)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise SingularCovariance("covariate covariance is singular even after regularization") from None
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def mahalanobis_balance(A: np.ndarray, V: np.ndarray, precision: Optional[np.ndarray] = None) -> np.ndarray:
    """Mahalanobis distance between treated and control covariate means, per row of ``A``.

    Rows with an empty arm get ``inf``.
    """
    A = np.atleast_2d(A).astype(float)
    if precision is None:
        precision = _precision_matrix(V)
    nt = A.sum(axis=1)
    nc = A.shape[1] - nt
    ok = (nt > 0) & (nc > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = (A @ V) / nt[:, None] - ((1 - A) @ V) / nc[:, None]
    d = np.einsum("ij,jk,ik->i", np.where(ok[:, None], diff, 0.0), precision, np.where(ok[:, None], diff, 0.0))
    return np.where(ok, d, np.inf)


def _select(p, V, precision, K, max_redraws, rng, size):
    """Best-of-K selection repeated ``size`` times; returns ``(size, n)`` assignments."""
    n = len(p)
    cand = rng.random((size, K, n)) < p
    dist = mahalanobis_balance(cand.reshape(size * K, n), V, precision).reshape(size, K)
    bad = ~np.isfinite(dist)
    redraws = 0
    while bad.any() and redraws < max_redraws:
        s_idx, k_idx = np.nonzero(bad)
        fresh = rng.random((len(s_idx), n)) < p
        cand[s_idx, k_idx] = fresh
        dist[s_idx, k_idx] = mahalanobis_balance(fresh, V, precision)
        bad = ~np.isfinite(dist)
        redraws += 1
    if bad.any():
        log.warning("re-randomization: %d candidates kept an empty arm after %d redraws", int(bad.sum()), max_redraws)
    best = np.argmin(dist, axis=1)  # all-inf rows fall back to candidate 0
    return cand[np.arange(size), best].astype(np.int8), dist[np.arange(size), best]


def effective_propensities(spec: DesignSpec, config: RerandConfig = RerandConfig(), rng=None,
                           chunk: int = 200) -> np.ndarray:
    """Treatment frequency of each unit over independent replays of the selection rule.

    Clipped to ``[1/(2R), 1 - 1/(2R)]`` so inverse weights stay finite.
    """
    if spec.covariates is None:
        raise DimensionMismatch("re-randomization needs covariates")
    rng = as_rng(rng)
    p = _probs(spec.p0)
    V = np.asarray(spec.covariates, dtype=float)
    precision = _precision_matrix(V)
    R = config.effective_p_replications
    counts = np.zeros(len(p))
    done = 0
    while done < R:
        m = min(chunk, R - done)
        sel, _ = _select(p, V, precision, config.candidates, config.max_redraws, rng, m)
        counts += sel.sum(axis=0)
        done += m
    eps = 1.0 / (2 * R)
    return np.clip(counts / R, eps, 1 - eps)


def rerandomize_assign(spec: DesignSpec, config: RerandConfig = RerandConfig(), rng=None,
                       effective_p: Optional[np.ndarray] = None) -> AssignmentDraw:
    """Keep the best-balanced of ``config.candidates`` Bernoulli draws.

    Effective propensities depend only on the design, so callers drawing
    repeatedly from one design should compute them once and pass them in.
    """
    if spec.covariates is None:
        raise DimensionMismatch("re-randomization needs covariates")
    rng = as_rng(rng)
    p = _probs(spec.p0)
    V = np.asarray(spec.covariates, dtype=float)
    if effective_p is None:
        effective_p = effective_propensities(spec, config, rng)
    sel, _ = _select(p, V, _precision_matrix(V), config.candidates, config.max_redraws, rng, 1)
    return AssignmentDraw(assignment=sel[0], mechanism=Mechanism.RERANDOMIZED,
                          effective_p=np.asarray(effective_p, dtype=float))

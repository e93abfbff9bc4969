"""Shared domain types, validation and small exact formulas."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

BUDGET_TOL = 1e-9
SNAP_TOL = 1e-12
# slack for comparing float distances against SNAP_TOL
_ULP_SLACK = 4 * np.finfo(float).eps


class SwapRoundError(Exception):
    """Base class for every error raised by this package."""


class DesignError(SwapRoundError, ValueError):
    """An input design (or data file) is invalid."""


class BudgetMismatch(DesignError):
    pass


class OutOfRange(DesignError):
    pass


class DimensionMismatch(DesignError):
    pass


class DegenerateWeight(SwapRoundError, ValueError):
    """A realized unit would be weighted by 1/0."""


class EmptyArm(SwapRoundError, ValueError):
    pass


class Mechanism(str, Enum):
    SWAP = "swap"
    COVARIATE_SWAP = "covariate_swap"
    BERNOULLI = "bernoulli"
    REJECTION_BUDGET = "rejection_budget"
    SRS = "srs"
    RERANDOMIZED = "rerandomized"


@dataclass(frozen=True)
class DesignSpec:
    """Target probabilities ``p0`` summing to an integer ``budget``.

    ``covariates`` is an optional ``(n, k)`` matrix whose row ``i`` describes
    unit ``i``; ``unit_ids`` are opaque labels carried through for I/O.
    """

    p0: np.ndarray
    budget: int
    covariates: Optional[np.ndarray] = None
    unit_ids: Optional[tuple] = None

    @property
    def n(self) -> int:
        return len(self.p0)

    @property
    def fractional(self) -> np.ndarray:
        return (self.p0 > 0) & (self.p0 < 1)


@dataclass(frozen=True)
class SwapRecord:
    step: int
    i: int
    j: int
    p_i: float
    p_j: float
    case: str  # "sum_le_1" | "sum_gt_1"
    branch: str  # "i_won" | "j_won"


@dataclass(frozen=True)
class SwapTrace:
    """Swaps executed by one rounding run, in order."""

    records: tuple = ()

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def pairs(self) -> np.ndarray:
        """``(T, 2)`` integer array of swapped index pairs."""
        if not self.records:
            return np.empty((0, 2), dtype=np.int64)
        return np.array([(r.i, r.j) for r in self.records], dtype=np.int64)

    @property
    def pre_values(self) -> np.ndarray:
        """``(T, 2)`` array of the live probabilities just before each swap."""
        if not self.records:
            return np.empty((0, 2))
        return np.array([(r.p_i, r.p_j) for r in self.records])


EMPTY_TRACE = SwapTrace()


@dataclass(frozen=True)
class AssignmentDraw:
    assignment: np.ndarray
    mechanism: Mechanism
    trace: SwapTrace = EMPTY_TRACE
    effective_p: Optional[np.ndarray] = None
    tries: Optional[int] = None

    @property
    def n_treated(self) -> int:
        return int(self.assignment.sum())


@dataclass(frozen=True)
class OutcomeTable:
    y0: np.ndarray
    y1: np.ndarray

    def __post_init__(self):
        if self.y0.shape != self.y1.shape or self.y0.ndim != 1:
            raise DimensionMismatch("y0 and y1 must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.y0)) and np.all(np.isfinite(self.y1))):
            raise OutOfRange("potential outcomes must be finite")

    @property
    def n(self) -> int:
        return len(self.y0)

    @property
    def nonnegative(self) -> bool:
        return bool(min(self.y0.min(), self.y1.min()) >= 0)

    def observed(self, assignment) -> np.ndarray:
        """Observed outcomes ``Y = Y(A)``; broadcasts over leading axes of ``assignment``."""
        a = np.asarray(assignment)
        return np.where(a == 1, self.y1, self.y0)


@dataclass(frozen=True)
class EstimateReport:
    tau_hat: float
    sigma_hat_sq: float
    ci_low: float
    ci_high: float
    alpha: float
    n: int
    method: str
    clamped: bool = False
    extra: dict = field(default_factory=dict)


def _snap(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=float)
    x[np.abs(x) <= SNAP_TOL + _ULP_SLACK] = 0.0
    x[np.abs(x - 1.0) <= SNAP_TOL + _ULP_SLACK] = 1.0
    return x


def validate_design(spec: DesignSpec) -> DesignSpec:
    """Check a design and return a copy with near-integral entries snapped.

    Raises
    ------
    OutOfRange
        If an entry is non-finite or outside ``[0, 1]``, or the budget is negative.
    BudgetMismatch
        If ``sum(p0)`` differs from the budget by more than ``BUDGET_TOL``.
    DimensionMismatch
        If covariates or ids do not have one row per unit.
    """
    p = np.asarray(spec.p0, dtype=float)
    if p.ndim != 1 or len(p) < 1:
        raise DimensionMismatch("p0 must be a non-empty 1-D vector")
    if not np.all(np.isfinite(p)):
        raise OutOfRange("p0 contains non-finite entries")
    p = _snap(p)
    bad = np.flatnonzero((p < 0) | (p > 1))
    if bad.size:
        raise OutOfRange(f"p0[{bad[0]}] = {p[bad[0]]!r} is outside [0, 1]")

    budget = spec.budget
    if int(budget) != budget or budget < 0:
        raise OutOfRange(f"budget must be a nonnegative integer, got {budget!r}")
    budget = int(budget)
    total = float(p.sum())
    if abs(total - budget) > BUDGET_TOL:
        raise BudgetMismatch(f"sum(p0) = {total!r} but budget = {budget}")

    cov = spec.covariates
    if cov is not None:
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        if cov.ndim != 2 or cov.shape[0] != len(p):
            raise DimensionMismatch(f"covariates have {cov.shape[0]} rows, expected {len(p)}")
    ids = spec.unit_ids
    if ids is not None:
        ids = tuple(ids)
        if len(ids) != len(p):
            raise DimensionMismatch(f"{len(ids)} unit ids for {len(p)} units")
    return DesignSpec(p0=p, budget=budget, covariates=cov, unit_ids=ids)


def pair_covariance(p_i: float, p_j: float) -> float:
    """Covariance of the two final indicators after one swap of ``(p_i, p_j)``."""
    for p in (p_i, p_j):
        if not 0.0 < p < 1.0:
            raise OutOfRange(f"pair_covariance needs probabilities in (0, 1), got {p!r}")
    if p_i + p_j <= 1.0:
        return -p_i * p_j
    return -(1.0 - p_i) * (1.0 - p_j)


def pair_covariance_array(p_i, p_j) -> np.ndarray:
    """Vectorized :func:`pair_covariance` without range checks."""
    p_i = np.asarray(p_i, dtype=float)
    p_j = np.asarray(p_j, dtype=float)
    return np.where(p_i + p_j <= 1.0, -p_i * p_j, -(1.0 - p_i) * (1.0 - p_j))


def sate(outcomes: OutcomeTable) -> float:
    """Sample average treatment effect."""
    return float(np.mean(outcomes.y1 - outcomes.y0))


def as_rng(rng=None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a hierarchical key, e.g. ``(n, scenario, method, rep)``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def design_from(p0: Sequence[float], budget: Optional[int] = None, **kw) -> DesignSpec:
    """Build and validate a design; the budget defaults to ``round(sum(p0))``."""
    p0 = np.asarray(p0, dtype=float)
    if budget is None:
        budget = int(round(float(p0.sum())))
    return validate_design(DesignSpec(p0=p0, budget=budget, **kw))

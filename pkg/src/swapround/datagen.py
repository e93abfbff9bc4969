"""Scenario generation, budget normalization and dataset files."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np

from .core import (
    BUDGET_TOL,
    DesignError,
    DesignSpec,
    OutcomeTable,
    OutOfRange,
    SwapRoundError,
    as_rng,
    validate_design,
)

REGIMES = ("uniform", "gaussian", "covariate_logistic")


class DegenerateBudget(DesignError):
    pass


class ParseError(DesignError):
    pass


class SchemaError(DesignError):
    pass


class InvalidParams(SwapRoundError, ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 100
    regime: str = "uniform"
    tau_true: float = 2.0
    noise_sd: float = 1.0
    covariate_dim: int = 3
    clip: Tuple[float, float] = (0.01, 0.99)
    scenario_seed: int = 0
    # N(0.5, gaussian_sd**2) before clipping
    gaussian_sd: float = 0.25
    shift_nonnegative: bool = False

    def __post_init__(self):
        lo, hi = self.clip
        if not 0.0 < lo < hi < 1.0:
            raise InvalidParams(f"clip bounds must satisfy 0 < lo < hi < 1, got {self.clip}")
        if self.n < 2:
            raise InvalidParams("need at least two units")
        if self.regime not in REGIMES:
            raise InvalidParams(f"unknown regime {self.regime!r}; expected one of {REGIMES}")


@dataclass(frozen=True)
class ScenarioParams:
    """Population-level coefficients, fixed for a scenario."""

    beta0: float
    beta: np.ndarray
    gamma0: float
    gamma: np.ndarray


def draw_scenario_params(config: SyntheticConfig, rng=None) -> ScenarioParams:
    rng = as_rng(rng)
    k = config.covariate_dim
    beta0 = float(rng.standard_normal())
    beta = rng.standard_normal(k)
    gamma0 = float(rng.standard_normal())
    gamma = rng.standard_normal(k)
    return ScenarioParams(beta0, beta, gamma0, gamma)


def _raw_propensities(config: SyntheticConfig, params: ScenarioParams, V: np.ndarray, rng) -> np.ndarray:
    lo, hi = config.clip
    shape = V.shape[:-1]
    if config.regime == "uniform":
        return rng.uniform(lo, hi, size=shape)
    if config.regime == "gaussian":
        return np.clip(rng.normal(0.5, config.gaussian_sd, size=shape), lo, hi)
    eta = params.gamma0 + V @ params.gamma
    return np.clip(1.0 / (1.0 + np.exp(-eta)), lo, hi)


def draw_population(params: ScenarioParams, config: SyntheticConfig, size: int, rng=None, n=None):
    """Draw ``size`` independent samples of ``n`` units from a fixed population.

    Returns ``(V, p0, budgets, y0, y1)`` with shapes ``(size, n, k)``,
    ``(size, n)``, ``(size,)``, ``(size, n)``, ``(size, n)``. The order of
    random draws is covariates, noise, propensities.
    """
    rng = as_rng(rng)
    n = config.n if n is None else n
    V = rng.standard_normal((size, n, config.covariate_dim))
    y0 = params.beta0 + V @ params.beta
    y1 = y0 + config.tau_true + config.noise_sd * rng.standard_normal((size, n))
    if config.shift_nonnegative:
        shift = np.maximum(-np.minimum(y0.min(axis=1), y1.min(axis=1)), 0.0)[:, None]
        y0, y1 = y0 + shift, y1 + shift
    p_raw = _raw_propensities(config, params, V, rng)
    p0, budgets = normalize_budget(p_raw, clip=config.clip)
    return V, p0, budgets, y0, y1


def generate_synthetic(config: SyntheticConfig, params: Optional[ScenarioParams] = None):
    """One synthetic scenario as ``(DesignSpec, OutcomeTable)``, reproducible from ``scenario_seed``.

    Covariates are iid standard normal, ``Y(0) = beta0 + V @ beta`` and
    ``Y(1) = Y(0) + tau_true + noise``. Coefficients are drawn once per scenario
    unless ``params`` is given.
    """
    rng = np.random.default_rng(config.scenario_seed)
    if params is None:
        params = draw_scenario_params(config, rng)
    V, p0, budgets, y0, y1 = draw_population(params, config, 1, rng)
    spec = validate_design(DesignSpec(p0=p0[0], budget=int(budgets[0]), covariates=V[0]))
    return spec, OutcomeTable(y0=y0[0], y1=y1[0])


def normalize_budget(p_raw, clip: Optional[Tuple[float, float]] = None):
    """Rescale raw probabilities so they sum to ``B = floor(sum(p_raw))``.

    Without ``clip`` this is the plain rescaling ``p_raw * B / sum(p_raw)``.
    With ``clip = (lo, hi)`` the result is ``clip(s * p_raw, lo, hi)`` for the
    scale ``s`` that makes the sum exactly ``B``, so entries stay inside the
    clip range. Works row-wise on 2-D input and then returns a budget vector.
    """
    p = np.asarray(p_raw, dtype=float)
    one_d = p.ndim == 1
    p = np.atleast_2d(p)
    if np.any(~np.isfinite(p)) or np.any(p <= 0) or np.any(p >= 1):
        raise OutOfRange("raw probabilities must lie strictly inside (0, 1)")
    total = p.sum(axis=1)
    budget = np.floor(total + BUDGET_TOL)
    if np.any(budget == 0):
        raise DegenerateBudget(f"sum of raw probabilities {total.min():.6g} < 1 leaves a zero budget")
    if clip is None:
        out = p * (budget / total)[:, None]
    else:
        out = _clipped_scaling(p, budget, clip)
    if one_d:
        return out[0], int(budget[0])
    return out, budget.astype(np.int64)


def _clipped_scaling(p, budget, clip):
    lo, hi = clip
    n = p.shape[1]
    if np.any(budget < n * lo - BUDGET_TOL) or np.any(budget > n * hi + BUDGET_TOL):
        raise DegenerateBudget("budget is unreachable inside the clip range")
    s_lo = np.zeros(len(p))
    s_hi = np.full(len(p), hi / p.min()) + 1.0
    # sum(clip(s * p)) is nondecreasing in s
    for _ in range(200):
        mid = 0.5 * (s_lo + s_hi)
        over = np.clip(mid[:, None] * p, lo, hi).sum(axis=1) > budget
        s_hi = np.where(over, mid, s_hi)
        s_lo = np.where(over, s_lo, mid)
        if np.all(s_hi - s_lo <= 1e-15 * s_hi):
            break
    q = np.clip(s_lo[:, None] * p, lo, hi)
    free = (q > lo) & (q < hi)
    fixed_sum = np.where(free, 0.0, q).sum(axis=1)
    free_sum = np.where(free, q, 0.0).sum(axis=1)
    fix = np.divide(budget - fixed_sum, free_sum, out=np.ones_like(free_sum), where=free_sum > 0)
    return np.where(free, q * fix[:, None], q)


# --- dataset files -------------------------------------------------------

REQUIRED_COLUMNS = ("id", "y0", "y1", "p0")


def load_dataset(path, normalize: bool = True):
    """Read a dataset CSV into ``(DesignSpec, OutcomeTable)``.

    Columns ``id, y0, y1, p0`` are required; columns prefixed ``v_`` become
    covariates in header order. ``p0`` is budget-normalized unless its sum is
    already an integer.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing required column(s) {', '.join(missing)}")
        cov_cols = [h for h in header if h.startswith("v_")]
        pos = {h: i for i, h in enumerate(header)}
        ids, y0, y1, p0, V = [], [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            ids.append(row[pos["id"]].strip())

            def num(col):
                raw = row[pos[col]].strip()
                try:
                    x = float(raw)
                except ValueError:
                    raise ParseError(f"{path}:{line_no}: column {col!r}: cannot parse {raw!r}") from None
                if not math.isfinite(x):
                    raise ParseError(f"{path}:{line_no}: column {col!r}: non-finite value {raw!r}")
                return x

            y0.append(num("y0"))
            y1.append(num("y1"))
            p0.append(num("p0"))
            V.append([num(c) for c in cov_cols])
    if not ids:
        raise SchemaError(f"{path}: no data rows")
    p = np.array(p0)
    total = p.sum()
    budget = round(total)
    if normalize and abs(total - budget) > BUDGET_TOL:
        p, budget = normalize_budget(p)
    cov = np.array(V) if cov_cols else None
    spec = validate_design(DesignSpec(p0=p, budget=int(budget), covariates=cov, unit_ids=tuple(ids)))
    return spec, OutcomeTable(y0=np.array(y0), y1=np.array(y1))


def save_dataset(path, spec: DesignSpec, outcomes: OutcomeTable, covariate_names=None) -> None:
    """Write the dataset CSV schema; floats use their shortest round-trip repr."""
    n = spec.n
    ids = spec.unit_ids if spec.unit_ids is not None else tuple(str(i) for i in range(n))
    V = spec.covariates
    k = 0 if V is None else V.shape[1]
    names = list(covariate_names) if covariate_names else [f"v_{c}" for c in range(k)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "y0", "y1", "p0", *names])
        for i in range(n):
            covs = [] if V is None else [repr(float(x)) for x in V[i]]
            w.writerow([ids[i], repr(float(outcomes.y0[i])), repr(float(outcomes.y1[i])),
                        repr(float(spec.p0[i])), *covs])


# --- Lipschitz construction ----------------------------------------------

@dataclass(frozen=True)
class LipschitzParams:
    """One-dimensional clustered covariates with affine outcome and propensity models.

    Units come in pairs at ``x_k`` and ``x_k + delta`` with ``gap`` between
    consecutive pairs. ``f(v) = f0 + f_slope v``, ``tau(v) = tau0 + tau_slope v``
    and ``p(v) = p_base + p_slope v`` before budget normalization.
    """

    n_pairs: int = 20
    delta: float = 0.05
    gap: float = 1.0
    f0: float = 1.0
    f_slope: float = 1.0
    tau0: float = 1.0
    tau_slope: float = 0.5
    p_base: float = 0.3
    p_slope: float = 0.005
    seed: int = 0


@dataclass(frozen=True)
class LipschitzScenario:
    spec: DesignSpec
    outcomes: OutcomeTable
    planted_order: np.ndarray
    f: Callable
    tau: Callable
    p: Callable
    delta: float
    c: float
    M: np.ndarray
    ell_M: float
    L_M: float
    planted_pairs: np.ndarray = field(default=None)

    def __iter__(self):
        return iter((self.spec, self.outcomes, self.planted_order))


def generate_lipschitz_scenario(params: LipschitzParams = LipschitzParams()) -> LipschitzScenario:
    """Plant an ordering under which adjacent units have nearly equal effective weights.

    Unit indices are shuffled, so index order carries no covariate information;
    ``planted_order`` lists the units by increasing covariate. Unpacks as
    ``spec, outcomes, planted_order``.

    Raises ``InvalidParams`` if ``delta >= gap``, probabilities leave (0, 1),
    outcomes can be negative, or the effective weight is not strictly monotone
    with ``L_M * delta < ell_M * gap`` (the all-flat control is exempt).
    """
    P = params
    if P.n_pairs < 1 or P.delta < 0 or not P.delta < P.gap:
        raise InvalidParams("need n_pairs >= 1 and 0 <= delta < gap")
    starts = np.arange(P.n_pairs) * (P.gap + P.delta)
    v_sorted = np.repeat(starts, 2)
    v_sorted[1::2] += P.delta
    n = len(v_sorted)
    v_max = float(v_sorted[-1])

    raw_p = P.p_base + P.p_slope * v_sorted
    if np.any(raw_p <= 0) or np.any(raw_p >= 1):
        raise InvalidParams("propensity model leaves (0, 1) on the covariate support")
    total = raw_p.sum()
    scale = 1.0 if abs(total - round(total)) <= BUDGET_TOL else math.floor(total) / total
    if scale == 0:
        raise InvalidParams("propensities sum below one")

    def f(v):
        return P.f0 + P.f_slope * np.asarray(v, dtype=float)

    def tau(v):
        return P.tau0 + P.tau_slope * np.asarray(v, dtype=float)

    def p(v):
        return scale * (P.p_base + P.p_slope * np.asarray(v, dtype=float))

    def M(v):
        pv = p(v)
        return (f(v) + tau(v)) / pv + f(v) / (1.0 - pv)

    grid = np.linspace(0.0, max(v_max, 1e-12), 4001)
    if np.any(f(grid) < 0) or np.any(f(grid) + tau(grid) < 0):
        raise InvalidParams("outcomes must be nonnegative on the covariate support")
    flat = P.f_slope == 0 and P.tau_slope == 0 and P.p_slope == 0
    if flat or n == 2:
        ell, L = 0.0, 0.0
    else:
        dM = np.diff(M(grid)) / np.diff(grid)
        if not (np.all(dM > 0) or np.all(dM < 0)):
            raise InvalidParams("effective weight is not strictly monotone, so not bi-Lipschitz")
        ell, L = float(np.abs(dM).min()), float(np.abs(dM).max())
        if not L * P.delta < ell * P.gap:
            raise InvalidParams(f"pairing condition fails: L_M*delta={L * P.delta:.4g} >= ell_M*gap={ell * P.gap:.4g}")

    perm = np.random.default_rng(P.seed).permutation(n)
    # unit perm[r] sits at sorted position r
    v = np.empty(n)
    v[perm] = v_sorted
    y0 = f(v)
    y1 = y0 + tau(v)
    spec = validate_design(DesignSpec(p0=p(v), budget=int(round(p(v).sum())), covariates=v[:, None]))
    return LipschitzScenario(spec=spec, outcomes=OutcomeTable(y0=y0, y1=y1), planted_order=perm.copy(),
                             f=f, tau=tau, p=p, delta=P.delta, c=P.gap, M=M(v), ell_M=ell, L_M=L,
                             planted_pairs=perm.reshape(-1, 2))

"""Short open paths through covariate space (nearest neighbour + 2-opt)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import DimensionMismatch

IMPROVE_TOL = 1e-12


@dataclass(frozen=True)
class OrderingResult:
    permutation: np.ndarray
    path_length: float
    improvement_passes: int


def _as_matrix(V) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.ndim != 2 or V.shape[0] < 1:
        raise DimensionMismatch("covariates must be an (n, k) matrix with n >= 1")
    if not np.all(np.isfinite(V)):
        raise ValueError("covariates must be finite")
    return V


def path_length(V, perm) -> float:
    """Sum of Euclidean distances between consecutive units of ``perm``."""
    V = _as_matrix(V)
    perm = np.asarray(perm)
    if perm.ndim != 1 or len(perm) != len(V) or not np.array_equal(np.sort(perm), np.arange(len(V))):
        raise DimensionMismatch("perm must be a permutation of the covariate rows")
    steps = np.diff(V[perm], axis=0)
    return float(np.sqrt((steps**2).sum(axis=1)).sum())


def _path_cost(D, path) -> float:
    return float(D[path[:-1], path[1:]].sum())


def nearest_neighbor_path(D: np.ndarray, start: int) -> np.ndarray:
    n = len(D)
    visited = np.zeros(n, dtype=bool)
    path = np.empty(n, dtype=np.int64)
    cur = start
    for k in range(n):
        path[k] = cur
        visited[cur] = True
        if k == n - 1:
            break
        d = np.where(visited, np.inf, D[cur])
        cur = int(np.argmin(d))  # lowest index wins ties
    return path


def _best_move_from(D, path, i):
    """Best reversal of ``path[i..j]`` over all ``j > i``; returns ``(gain, j)``."""
    n = len(path)
    js = np.arange(i + 1, n)
    if i == 0:
        js = js[:-1]  # reversing the whole path changes nothing
        if js.size == 0:
            return 0.0, -1
    a = path[i]
    nxt = np.full(js.shape, -1)
    inner = js < n - 1
    nxt[inner] = path[js[inner] + 1]
    old = np.zeros(js.shape)
    new = np.zeros(js.shape)
    if i > 0:
        prev = path[i - 1]
        old += D[prev, a]
        new += D[prev, path[js]]
    old[inner] += D[path[js[inner]], nxt[inner]]
    new[inner] += D[a, nxt[inner]]
    delta = new - old
    k = int(np.argmin(delta))
    return float(delta[k]), int(js[k])


def two_opt(D: np.ndarray, path: np.ndarray, max_passes: int = 50):
    """Improve an open path by segment reversals (end segments included).

    Returns ``(path, passes)`` where ``passes`` counts sweeps that changed the path.
    """
    path = np.array(path, dtype=np.int64)
    n = len(path)
    passes = 0
    if n < 3:
        return path, passes
    for _ in range(max_passes):
        improved = False
        for i in range(n - 1):
            delta, j = _best_move_from(D, path, i)
            if delta < -IMPROVE_TOL:
                path[i:j + 1] = path[i:j + 1][::-1].copy()
                improved = True
        if not improved:
            break
        passes += 1
    return path, passes


def is_two_opt_optimal(D: np.ndarray, path) -> bool:
    """True when no single segment reversal shortens the path (exhaustive scan)."""
    path = np.asarray(path)
    n = len(path)
    base = _path_cost(D, path)
    for i in range(n - 1):
        for j in range(i + 1, n):
            if i == 0 and j == n - 1:
                continue
            cand = path.copy()
            cand[i:j + 1] = cand[i:j + 1][::-1]
            if _path_cost(D, cand) < base - 1e-9:
                return False
    return True


def order_covariates(V, start_rule: str = "centroid", two_opt_max_passes: int = 50,
                     standardize: bool = False) -> OrderingResult:
    """Order units along a short Hamiltonian path in covariate space.

    Greedy nearest neighbour from the start unit, then 2-opt until no
    reversal helps or the pass limit is reached. ``start_rule`` is
    ``"centroid"`` (unit closest to the mean) or ``"first"`` (unit 0).
    Ties always go to the lowest index, so the result is deterministic.
    """
    V = _as_matrix(V)
    n = len(V)
    if n == 1:
        return OrderingResult(np.zeros(1, dtype=np.int64), 0.0, 0)
    X = V
    if standardize:
        sd = V.std(axis=0)
        X = (V - V.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    D = cdist(X, X)
    if start_rule == "centroid":
        start = int(np.argmin(((X - X.mean(axis=0)) ** 2).sum(axis=1)))
    elif start_rule == "first":
        start = 0
    else:
        raise ValueError(f"unknown start_rule {start_rule!r}")
    greedy = nearest_neighbor_path(D, start)
    path, passes = two_opt(D, greedy, two_opt_max_passes)
    # lengths are reported on the raw covariates
    return OrderingResult(path, path_length(V, path), passes)

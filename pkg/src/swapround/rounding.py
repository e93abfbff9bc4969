"""Swap rounding for the B-uniform matroid.

Every swap takes two fractional entries and drives at least one of them to
0 or 1 while keeping the expectation of both unchanged:

* ``p_i + p_j <= 1``: with probability ``p_i / (p_i + p_j)`` unit ``i`` takes
  the whole mass ``(p_i + p_j, 0)``, otherwise ``(0, p_i + p_j)``.
* ``p_i + p_j > 1``: with probability ``(1 - p_j) / (2 - p_i - p_j)`` unit ``i``
  is rounded up, ``(1, p_i + p_j - 1)``, otherwise ``(p_i + p_j - 1, 1)``.

Pairs are chosen by walking the units in some order and always swapping the
single surviving fractional unit (the *carrier*) with the next fractional unit.

The scalar path (:func:`swap_round`) and the vectorized path
(:func:`chain_round`) share their random inputs: a walk order and one uniform
per walk position. Given the same inputs they produce identical output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Tuple, Union

import numpy as np

from .core import (
    SNAP_TOL,
    AssignmentDraw,
    DesignSpec,
    DimensionMismatch,
    Mechanism,
    OutOfRange,
    SwapRecord,
    SwapTrace,
    as_rng,
    validate_design,
)

CASE_LE = "sum_le_1"
CASE_GT = "sum_gt_1"
I_WON = "i_won"
J_WON = "j_won"
_CELL_BUDGET = 1_000_000


@dataclass(frozen=True)
class SequentialChain:
    """Walk units in index order."""

    def order(self, n: int, rng=None) -> np.ndarray:
        return np.arange(n)

    def orders(self, n: int, size: int, rng=None) -> np.ndarray:
        return np.broadcast_to(np.arange(n), (size, n))


@dataclass(frozen=True)
class RandomChain:
    """Walk units in a fresh uniform permutation drawn from the draw's stream."""

    def order(self, n: int, rng=None) -> np.ndarray:
        return as_rng(rng).permutation(n)

    def orders(self, n: int, size: int, rng=None) -> np.ndarray:
        return as_rng(rng).permuted(np.tile(np.arange(n), (size, 1)), axis=1)


@dataclass(frozen=True)
class OrderedChain:
    """Walk units in a fixed permutation, e.g. a covariate ordering."""

    permutation: tuple

    def __init__(self, permutation):
        perm = tuple(int(k) for k in np.asarray(permutation).ravel())
        if sorted(perm) != list(range(len(perm))):
            raise DimensionMismatch("OrderedChain needs a permutation of 0..n-1")
        object.__setattr__(self, "permutation", perm)

    def order(self, n: int, rng=None) -> np.ndarray:
        if len(self.permutation) != n:
            raise DimensionMismatch(f"permutation has length {len(self.permutation)}, design has {n} units")
        return np.asarray(self.permutation)

    def orders(self, n: int, size: int, rng=None) -> np.ndarray:
        return np.broadcast_to(self.order(n), (size, n))


PairingStrategy = Union[SequentialChain, RandomChain, OrderedChain]


def _is_frac(x: float) -> bool:
    return SNAP_TOL < x < 1.0 - SNAP_TOL


def _clean(x: float) -> float:
    if x <= SNAP_TOL:
        return 0.0
    if x >= 1.0 - SNAP_TOL:
        return 1.0
    return x


def swap_step(p_i: float, p_j: float, u: float) -> Tuple[float, float, str, str]:
    """One swap driven by the uniform ``u`` in [0, 1)."""
    s = p_i + p_j
    if s <= 1.0:
        if u < p_i / s:
            return _clean(s), 0.0, CASE_LE, I_WON
        return 0.0, _clean(s), CASE_LE, J_WON
    if u < (1.0 - p_j) / (2.0 - s):
        return 1.0, _clean(s - 1.0), CASE_GT, I_WON
    return _clean(s - 1.0), 1.0, CASE_GT, J_WON


def single_swap(p_i: float, p_j: float, rng=None) -> Tuple[float, float, str, str]:
    """Randomly resolve the pair ``(p_i, p_j)``; returns ``(new_i, new_j, case, branch)``."""
    for p in (p_i, p_j):
        if not 0.0 < p < 1.0:
            raise OutOfRange(f"single_swap needs probabilities in (0, 1), got {p!r}")
    return swap_step(float(p_i), float(p_j), float(as_rng(rng).random()))


def chain_pairs(n: int, fractional_mask, strategy: PairingStrategy = SequentialChain(),
                rng=None, order=None) -> Iterator[Tuple[int, int]]:
    """Generate ``(carrier, incoming)`` pairs along the strategy's walk.

    The consumer sends back the index that is still fractional after the swap
    (or ``None``). Plain iteration sends ``None``, which treats every pair as
    fully resolved.
    """
    if order is None:
        order = strategy.order(n, rng)
    mask = np.asarray(fractional_mask, dtype=bool)
    carrier = None
    for k in order:
        k = int(k)
        if not mask[k]:
            continue
        if carrier is None:
            carrier = k
            continue
        carrier = yield carrier, k


def _round_walk(p: np.ndarray, order: np.ndarray, u: np.ndarray):
    """Scalar reference walk; ``u[pos]`` drives the swap at walk position ``pos``."""
    live = [float(x) for x in p]
    a = np.zeros(len(live), dtype=np.int8)
    records = []
    pos_of = {int(k): pos for pos, k in enumerate(order)}
    gen = chain_pairs(len(live), [_is_frac(x) for x in live], order=order)
    try:
        pair = next(gen)
        while True:
            i, j = pair
            new_i, new_j, case, branch = swap_step(live[i], live[j], float(u[pos_of[j]]))
            records.append(SwapRecord(len(records), i, j, live[i], live[j], case, branch))
            live[i], live[j] = new_i, new_j
            survivor = i if _is_frac(new_i) else (j if _is_frac(new_j) else None)
            pair = gen.send(survivor)
    except StopIteration:
        pass
    for k, x in enumerate(live):
        # a leftover carrier only exists through float drift in sum(p0)
        a[k] = 1 if x >= 0.5 else 0
    return a, SwapTrace(tuple(records))


def swap_round(spec: DesignSpec, strategy: PairingStrategy = SequentialChain(), rng=None,
               validate: bool = True) -> AssignmentDraw:
    """Draw one budget-exact assignment whose marginals equal ``spec.p0``.

    The random stream is consumed as: walk order (if the strategy needs one),
    then ``n`` uniforms, one per walk position.
    """
    if validate:
        spec = validate_design(spec)
    rng = as_rng(rng)
    order = np.asarray(strategy.order(spec.n, rng))
    u = rng.random(spec.n)
    a, trace = _round_walk(spec.p0, order, u)
    mech = Mechanism.COVARIATE_SWAP if isinstance(strategy, OrderedChain) else Mechanism.SWAP
    return AssignmentDraw(assignment=a, mechanism=mech, trace=trace)


@dataclass(frozen=True)
class BatchTrace:
    """Swap traces for many draws, indexed by ``(draw, walk position)``.

    ``left[r, k] >= 0`` marks a swap between carrier ``left`` and the unit
    ``right`` entering at walk position ``k``.
    """

    left: np.ndarray
    right: np.ndarray
    pre_left: np.ndarray
    pre_right: np.ndarray
    left_won: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.left >= 0

    def counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def row(self, r: int) -> SwapTrace:
        ks = np.flatnonzero(self.left[r] >= 0)
        recs = []
        for t, k in enumerate(ks):
            pi, pj = float(self.pre_left[r, k]), float(self.pre_right[r, k])
            recs.append(SwapRecord(t, int(self.left[r, k]), int(self.right[r, k]), pi, pj,
                                   CASE_LE if pi + pj <= 1.0 else CASE_GT,
                                   I_WON if self.left_won[r, k] else J_WON))
        return SwapTrace(tuple(recs))


def _clean_arr(x: np.ndarray) -> np.ndarray:
    return np.where(x <= SNAP_TOL, 0.0, np.where(x >= 1.0 - SNAP_TOL, 1.0, x))


def _carrier_values(P: np.ndarray, frac: np.ndarray):
    """Carrier bookkeeping along the walk, which does not depend on the uniforms.

    Arrays are position-major, ``(n, R)``. Whichever unit survives a swap
    carries the same value (``p_i + p_j`` or ``p_i + p_j - 1``). Returns, per
    walk position, the carrier value before the position, whether a carrier
    exists, the value continuing after a swap there and whether that value is
    still fractional; then the final carrier value and presence. The
    arithmetic mirrors :func:`swap_step`.
    """
    n, R = P.shape
    Qb = np.empty((n, R))
    Hb = np.empty((n, R), dtype=bool)
    C = np.empty((n, R))
    CF = np.empty((n, R), dtype=bool)
    q = np.zeros(R)
    has = np.zeros(R, dtype=bool)
    all_frac = frac.all(axis=1)
    for k in range(n):
        Qb[k] = q
        Hb[k] = has
        pk = P[k]
        cont = C[k]
        np.add(q, pk, out=cont)
        np.subtract(cont, cont > 1.0, out=cont)
        cf = CF[k]
        np.greater(cont, SNAP_TOL, out=cf)
        cf &= cont < 1.0 - SNAP_TOL
        if all_frac[k]:
            q = np.where(has, cont, pk)
            has = cf | ~has
        else:
            fk = frac[k]
            q = np.where(fk, np.where(has, cont, pk), q)
            has = np.where(fk, cf | ~has, has)
    return Qb, Hb, C, CF, q, has


@dataclass(frozen=True)
class _WalkPlan:
    """Everything about a walk that does not depend on the uniforms.

    Arrays are ``(n, R')`` by walk position, with ``R' = 1`` when the order is shared.
    """

    P: np.ndarray
    frac: np.ndarray
    swap: np.ndarray
    start: np.ndarray
    Qb: np.ndarray
    le: np.ndarray
    thr: np.ndarray
    cf: np.ndarray
    cont_up: np.ndarray
    tail: np.ndarray


def _walk_plan(p: np.ndarray, orders_t: np.ndarray) -> _WalkPlan:
    """Plan walks given position-major orders ``orders_t`` of shape ``(n, R')``."""
    if p.ndim == 1:
        P = p[orders_t]
    else:
        P = np.take_along_axis(p.T, orders_t, axis=0)
    frac = (P > SNAP_TOL) & (P < 1.0 - SNAP_TOL)
    Qb, Hb, cont, cf, q_end, has_end = _carrier_values(P, frac)
    s = Qb + P
    le = s <= 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        thr = np.where(le, Qb / s, (1.0 - P) / (2.0 - s))
    return _WalkPlan(P=P, frac=frac, swap=frac & Hb, start=frac & ~Hb, Qb=Qb, le=le, thr=thr, cf=cf,
                     cont_up=cont >= 0.5, tail=(q_end >= 0.5) & has_end)


def _resolve(plan: _WalkPlan, orders_t: np.ndarray, u_t: np.ndarray, record_trace: bool, inverse=None):
    """Apply uniforms ``u_t`` (``(n, R)``) to a plan; returns ``(R, n)`` assignments."""
    n, R = u_t.shape
    win = u_t < plan.thr
    keep = win == plan.le  # the old carrier survives the swap
    ends = plan.swap & ~(keep & plan.cf)
    becomes = plan.start | (plan.swap & ~keep & plan.cf)
    end_val = np.where(keep, plan.cont_up, ~plan.le)
    j_val = np.where(keep, ~plan.le, plan.cont_up)

    # a unit that starts carrying at k is resolved at the next position where the carrier
    # ends; encode (position, resolved bit) so one reverse running minimum finds both
    pos = np.arange(n, dtype=np.int32)[:, None]
    big = np.int32(2 * n)
    code = np.where(ends, 2 * pos + end_val, big)
    nxt = np.minimum.accumulate(code[::-1], axis=0)[::-1]
    after = np.empty_like(nxt)
    after[:-1] = nxt[1:]
    after[-1] = big
    carried = np.where(after < big, (after & 1).astype(bool), plan.tail)
    vals = np.where(plan.frac, np.where(becomes, carried, j_val), plan.P >= 0.5).astype(np.int8)
    if inverse is not None:
        a = np.ascontiguousarray(vals[inverse].T)
    else:
        a = np.empty((R, n), dtype=np.int8)
        np.put_along_axis(a, orders_t.T, vals.T, axis=1)
    if not record_trace:
        return a, None

    shape = (n, R)
    last = np.maximum.accumulate(np.where(becomes, pos, -1), axis=0)
    prev = np.empty_like(last)
    prev[0] = -1
    prev[1:] = last[:-1]
    orders_t = np.broadcast_to(orders_t, shape)
    holder = np.take_along_axis(orders_t, np.maximum(prev, 0), axis=0)
    swap = np.broadcast_to(plan.swap, shape)
    trace = BatchTrace(left=np.where(swap, holder, -1).T.astype(np.int64),
                       right=np.where(swap, orders_t, -1).T.astype(np.int64),
                       pre_left=np.ascontiguousarray(np.where(swap, plan.Qb, 0.0).T),
                       pre_right=np.ascontiguousarray(np.where(swap, plan.P, 0.0).T),
                       left_won=np.ascontiguousarray((win & swap).T))
    return a, trace


def chain_round(p: np.ndarray, orders: np.ndarray, u: np.ndarray,
                record_trace: bool = False) -> Tuple[np.ndarray, Optional[BatchTrace]]:
    """Vectorized chain swap rounding of many rows at once.

    Parameters
    ----------
    p : (R, n) or (n,) array
        Probabilities per draw, in unit index space. Rows may differ.
    orders : (R, n) int array
        Walk order of each draw.
    u : (R, n) array
        Uniforms; ``u[r, k]`` drives the swap at walk position ``k``.

    Returns
    -------
    assignments : (R, n) int8 array
    trace : BatchTrace or None
    """
    orders = np.asarray(orders)
    R, n = orders.shape
    p = np.asarray(p, dtype=float)
    u_t = np.ascontiguousarray(np.asarray(u, dtype=float).T)
    if p.ndim == 1 and (R == 1 or np.array_equal(orders, np.broadcast_to(orders[0], (R, n)))):
        row = orders[:1].T
        return _resolve(_walk_plan(p, row), row, u_t, record_trace, np.argsort(orders[0]))
    orders_t = np.ascontiguousarray(orders.T)
    return _resolve(_walk_plan(p, orders_t), orders_t, u_t, record_trace)


def swap_round_batch(spec: DesignSpec, size: int, strategy: PairingStrategy = SequentialChain(),
                     rng=None, record_trace: bool = False, chunk: int = 20000,
                     validate: bool = True):
    """Draw ``size`` independent swap-rounded assignments as an ``(size, n)`` array.

    Draws are generated in chunks. Random walks draw a chunk's orders before
    its uniforms, so the stream differs from ``size`` calls to :func:`swap_round`;
    fixed walks are planned once and only consume uniforms.
    Returns ``(assignments, trace)`` where ``trace`` is a :class:`BatchTrace` or None.
    """
    if validate:
        spec = validate_design(spec)
    rng = as_rng(rng)
    n = spec.n
    out, traces = [], []
    done = 0
    # keep (chunk, n) temporaries around a few megabytes
    chunk = max(1, min(chunk, _CELL_BUDGET // max(n, 1)))
    p0 = np.asarray(spec.p0, dtype=float)
    shared = None
    if not isinstance(strategy, RandomChain):
        order = np.asarray(strategy.order(n, rng))
        shared = (order[:, None], _walk_plan(p0, order[:, None]), np.argsort(order))
    while done < size:
        m = min(chunk, size - done)
        if shared is None:
            orders = strategy.orders(n, m, rng)
            u = rng.random((m, n))
            a, tr = chain_round(p0, orders, u, record_trace)
        else:
            # uniforms laid out position-major; u_t[k, r] drives draw r at position k
            u_t = rng.random((m, n)).T
            a, tr = _resolve(shared[1], shared[0], np.ascontiguousarray(u_t), record_trace, shared[2])
        out.append(a)
        traces.append(tr)
        done += m
    a = np.concatenate(out) if out else np.zeros((0, n), dtype=np.int8)
    if not record_trace:
        return a, None
    if len(traces) == 1:
        return a, traces[0]
    return a, BatchTrace(*(np.concatenate([getattr(t, f) for t in traces])
                           for f in ("left", "right", "pre_left", "pre_right", "left_won")))

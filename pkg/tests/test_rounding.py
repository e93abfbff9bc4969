from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exact_chain_law, random_rational_design
from swapround.core import DesignSpec, DimensionMismatch, OutOfRange, validate_design
from swapround.rounding import (
    CASE_GT,
    CASE_LE,
    I_WON,
    J_WON,
    OrderedChain,
    RandomChain,
    SequentialChain,
    _round_walk,
    chain_pairs,
    chain_round,
    single_swap,
    swap_round,
    swap_round_batch,
    swap_step,
)

probs = st.floats(min_value=1e-6, max_value=1 - 1e-6, allow_nan=False)


def _threshold(pi, pj):
    s = pi + pj
    return pi / s if s <= 1 else (1 - pj) / (2 - s)


@given(probs, probs)
def test_swap_step_is_mean_preserving(pi, pj):
    # u below the threshold gives the i_won branch; averaging over u is exact
    w = _threshold(pi, pj)
    hi_i, hi_j, case, branch = swap_step(pi, pj, 0.0)
    lo_i, lo_j, _, branch2 = swap_step(pi, pj, np.nextafter(1.0, 0))
    assert (branch, branch2) == (I_WON, J_WON)
    assert case == (CASE_LE if pi + pj <= 1 else CASE_GT)
    assert w * hi_i + (1 - w) * lo_i == pytest.approx(pi, abs=1e-12)
    assert w * hi_j + (1 - w) * lo_j == pytest.approx(pj, abs=1e-12)


@given(probs, probs, st.floats(min_value=0, max_value=1, exclude_max=True))
def test_swap_step_resolves_one_and_keeps_sum(pi, pj, u):
    ni, nj, _, _ = swap_step(pi, pj, u)
    assert ni + nj == pytest.approx(pi + pj, abs=1e-12)
    assert ni in (0.0, 1.0) or nj in (0.0, 1.0)
    assert 0 <= ni <= 1 and 0 <= nj <= 1


def test_case_two_direction():
    # p_i = 0.9, p_j = 0.6: unit i must be rounded up with prob (1-0.6)/(2-1.5) = 0.8
    assert swap_step(0.9, 0.6, 0.79)[0] == 1.0
    assert swap_step(0.9, 0.6, 0.81)[1] == 1.0


def test_single_swap_checks_range():
    with pytest.raises(OutOfRange):
        single_swap(0.0, 0.5)
    ni, nj, _, _ = single_swap(0.3, 0.4, np.random.default_rng(0))
    assert sorted([ni, nj]) == [0.0, pytest.approx(0.7)]


def test_chain_pairs_skips_integral_units():
    gen = chain_pairs(5, [True, False, True, True, False], SequentialChain())
    first = next(gen)
    assert first == (0, 2)
    assert gen.send(2) == (2, 3)
    # plain iteration treats each pair as fully resolved
    assert list(chain_pairs(4, [True] * 4, SequentialChain())) == [(0, 1), (2, 3)]


def test_ordered_chain_validates_permutation():
    with pytest.raises(DimensionMismatch):
        OrderedChain([0, 0, 1])
    with pytest.raises(DimensionMismatch):
        OrderedChain([0, 1, 2]).order(4)


@pytest.mark.parametrize("seed", range(6))
def test_scalar_law_matches_exact_law(seed):
    # compare the empirical law of the scalar sampler with the exact rational law
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 7))
    p = random_rational_design(n, rng)
    order = rng.permutation(n)
    law = exact_chain_law(p, list(order))
    spec = validate_design(DesignSpec(p0=np.array([float(x) for x in p]), budget=int(sum(p))))
    R = 4000
    counts: dict = {}
    for _ in range(R):
        a = swap_round(spec, OrderedChain(order), rng, validate=False).assignment
        counts[tuple(a)] = counts.get(tuple(a), 0) + 1
    assert set(counts) <= set(law)
    for key, w in law.items():
        w = float(w)
        assert abs(counts.get(key, 0) / R - w) <= 4 * np.sqrt(w * (1 - w) / R) + 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_exact_law_marginals_and_budget(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(2, 8))
    p = random_rational_design(n, rng)
    law = exact_chain_law(p, list(rng.permutation(n)))
    assert sum(law.values()) == 1
    B = sum(p)
    assert all(sum(a) == B for a in law)
    for i in range(n):
        assert sum(w for a, w in law.items() if a[i] == 1) == p[i]


def _design(draw, n_max=30):
    n = draw(st.integers(2, n_max))
    raw = np.array(draw(st.lists(probs, min_size=n, max_size=n)))
    B = max(1, int(np.floor(raw.sum())))
    p = raw * B / raw.sum()
    if np.any(p >= 1):
        p = np.full(n, B / n)
    return validate_design(DesignSpec(p0=p, budget=B))


@st.composite
def designs(draw):
    return _design(draw)


@given(designs(), st.integers(0, 2**32 - 1))
def test_budget_exact_and_trace_consistent(spec, seed):
    draw = swap_round(spec, RandomChain(), np.random.default_rng(seed))
    assert draw.assignment.sum() == spec.budget
    assert set(np.unique(draw.assignment)) <= {0, 1}
    fractional = int(spec.fractional.sum())
    assert len(draw.trace) <= max(fractional - 1, 0)
    for k, rec in enumerate(draw.trace):
        assert rec.step == k
        assert 0 < rec.p_i < 1 and 0 < rec.p_j < 1


@given(designs(), st.integers(0, 2**32 - 1))
@settings(max_examples=40)
def test_scalar_and_vectorized_paths_agree(spec, seed):
    rng = np.random.default_rng(seed)
    R = 5
    orders = RandomChain().orders(spec.n, R, rng)
    u = rng.random((R, spec.n))
    A, tr = chain_round(spec.p0, orders, u, record_trace=True)
    for r in range(R):
        a, trace = _round_walk(spec.p0, orders[r], u[r])
        assert np.array_equal(A[r], a)
        assert tr.row(r) == trace


@st.composite
def quarter_designs(draw):
    # dyadic entries make exact ties (pairs summing to one, integral units) common
    p = draw(st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), min_size=1, max_size=25))
    f = sum(p) % 1
    if f:
        p.append(1 - f)
    return validate_design(DesignSpec(np.array(p), int(round(sum(p)))))


@given(quarter_designs(), st.integers(0, 2**32 - 1), st.booleans())
@settings(max_examples=80)
def test_paths_agree_with_exact_ties(spec, seed, shared):
    rng = np.random.default_rng(seed)
    R = 4
    orders = np.tile(rng.permutation(spec.n), (R, 1)) if shared else RandomChain().orders(spec.n, R, rng)
    u = rng.random((R, spec.n))
    A, tr = chain_round(spec.p0, orders, u, record_trace=True)
    assert np.all(A.sum(axis=1) == spec.budget)
    for r in range(R):
        a, trace = _round_walk(spec.p0, orders[r], u[r])
        assert np.array_equal(A[r], a)
        assert tr.row(r) == trace


@given(quarter_designs(), st.integers(0, 2**32 - 1), st.integers(1, 7))
@settings(max_examples=60)
def test_fixed_walk_batch_matches_walk_by_walk(spec, seed, chunk):
    perm = np.random.default_rng(seed).permutation(spec.n)
    R = 9
    A, tr = swap_round_batch(spec, R, OrderedChain(perm), np.random.default_rng(seed), record_trace=True,
                             chunk=chunk)
    rng = np.random.default_rng(seed)
    u = np.concatenate([rng.random((min(chunk, R - k), spec.n)) for k in range(0, R, chunk)])
    for r in range(R):
        a, trace = _round_walk(spec.p0, perm, u[r])
        assert np.array_equal(A[r], a)
        assert tr.row(r) == trace


def test_integral_entries_pass_through():
    spec = validate_design(DesignSpec(p0=np.array([1.0, 0.0, 0.5, 0.5, 1.0]), budget=3))
    for seed in range(20):
        a = swap_round(spec, RandomChain(), np.random.default_rng(seed)).assignment
        assert a[0] == 1 and a[1] == 0 and a[4] == 1 and a[2] + a[3] == 1


def test_zero_and_full_budget():
    assert swap_round(validate_design(DesignSpec(np.zeros(4), 0))).assignment.sum() == 0
    assert swap_round(validate_design(DesignSpec(np.ones(4), 4))).assignment.sum() == 4


def test_single_fractional_unit_is_impossible():
    with pytest.raises(Exception):
        validate_design(DesignSpec(np.array([0.5, 1.0]), 1))


def test_swap_round_reproducible():
    spec = validate_design(DesignSpec(np.full(10, 0.3), 3))
    a = swap_round(spec, RandomChain(), np.random.default_rng(5)).assignment
    b = swap_round(spec, RandomChain(), np.random.default_rng(5)).assignment
    assert np.array_equal(a, b)


@pytest.mark.parametrize("strategy", [SequentialChain(), RandomChain(), OrderedChain([3, 1, 4, 0, 2, 5])])
def test_batch_marginals(strategy):
    p = np.array([0.15, 0.85, 0.6, 0.9, 0.2, 0.3])
    spec = validate_design(DesignSpec(p, 3))
    R = 40000
    A, tr = swap_round_batch(spec, R, strategy, np.random.default_rng(9), record_trace=True, chunk=7000)
    assert np.all(A.sum(axis=1) == 3)
    se = np.sqrt(p * (1 - p) / R)
    assert np.all(np.abs(A.mean(axis=0) - p) < 4 * se)
    # a pair summing to exactly one resolves both units, skipping a swap
    assert np.all(tr.counts() <= 5)


def test_exact_fraction_sanity():
    assert exact_chain_law([Fraction(1, 2), Fraction(1, 2)], [0, 1]) == {(1, 0): Fraction(1, 2), (0, 1): Fraction(1, 2)}

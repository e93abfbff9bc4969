import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swapround.core import OutOfRange
from swapround.datagen import (
    DegenerateBudget,
    InvalidParams,
    LipschitzParams,
    ParseError,
    SchemaError,
    SyntheticConfig,
    draw_population,
    draw_scenario_params,
    generate_lipschitz_scenario,
    generate_synthetic,
    load_dataset,
    normalize_budget,
    save_dataset,
)


@pytest.mark.parametrize("regime", ["uniform", "gaussian", "covariate_logistic"])
def test_synthetic_design_valid_and_reproducible(regime):
    cfg = SyntheticConfig(n=200, regime=regime, scenario_seed=4)
    spec, out = generate_synthetic(cfg)
    spec2, out2 = generate_synthetic(cfg)
    assert np.array_equal(spec.p0, spec2.p0) and np.array_equal(out.y1, out2.y1)
    assert spec.p0.sum() == pytest.approx(spec.budget, abs=1e-9)
    assert spec.p0.min() >= 0.01 - 1e-12 and spec.p0.max() <= 0.99 + 1e-12
    assert spec.covariates.shape == (200, 3)


def test_outcome_model_with_zero_noise():
    spec, out = generate_synthetic(SyntheticConfig(n=50, noise_sd=0.0, tau_true=2.0))
    assert np.allclose(out.y1 - out.y0, 2.0)


def test_outcomes_linear_in_covariates():
    cfg = SyntheticConfig(n=40, scenario_seed=9)
    params = draw_scenario_params(cfg, np.random.default_rng(1))
    spec, out = generate_synthetic(cfg, params)
    assert np.allclose(out.y0, params.beta0 + spec.covariates @ params.beta)


def test_shift_makes_outcomes_nonnegative():
    spec, out = generate_synthetic(SyntheticConfig(n=100, shift_nonnegative=True))
    assert out.nonnegative
    assert min(out.y0.min(), out.y1.min()) == pytest.approx(0.0, abs=1e-12)


def test_population_batches():
    cfg = SyntheticConfig(n=30)
    params = draw_scenario_params(cfg, np.random.default_rng(0))
    V, p, B, y0, y1 = draw_population(params, cfg, 5, np.random.default_rng(1))
    assert V.shape == (5, 30, 3) and p.shape == (5, 30) and B.shape == (5,)
    assert np.allclose(p.sum(axis=1), B, atol=1e-9)


@pytest.mark.parametrize("bad", [dict(clip=(0.0, 0.9)), dict(clip=(0.6, 0.4)), dict(n=1), dict(regime="beta")])
def test_invalid_config(bad):
    with pytest.raises(InvalidParams):
        SyntheticConfig(**bad)


def test_normalize_plain_example():
    p, B = normalize_budget(np.array([0.4, 0.4, 0.4]))
    assert B == 1
    assert np.allclose(p, 1 / 3)


def test_normalize_degenerate():
    with pytest.raises(DegenerateBudget):
        normalize_budget(np.array([0.2, 0.3]))
    with pytest.raises(OutOfRange):
        normalize_budget(np.array([0.2, 1.3]))


@given(st.lists(st.floats(0.01, 0.99), min_size=3, max_size=60))
def test_normalize_with_clip_keeps_range_and_sum(raw):
    raw = np.array(raw)
    if raw.sum() < 1:
        return
    B = int(np.floor(raw.sum() + 1e-9))
    if B > 0.99 * len(raw):
        with pytest.raises(DegenerateBudget):
            normalize_budget(raw, clip=(0.01, 0.99))
        return
    p, B2 = normalize_budget(raw, clip=(0.01, 0.99))
    assert B2 == B
    assert abs(p.sum() - B) < 1e-9
    assert p.min() >= 0.01 - 1e-12 and p.max() <= 0.99 + 1e-12
    # order is preserved
    assert np.all(np.diff(p[np.argsort(raw, kind="stable")]) >= -1e-12)


def test_dataset_roundtrip(tmp_path):
    spec, out = generate_synthetic(SyntheticConfig(n=15))
    path = tmp_path / "d.csv"
    save_dataset(path, spec, out)
    spec2, out2 = load_dataset(path)
    assert np.array_equal(spec.p0, spec2.p0) and spec2.budget == spec.budget
    assert np.array_equal(spec.covariates, spec2.covariates)
    assert np.array_equal(out.y0, out2.y0) and np.array_equal(out.y1, out2.y1)


def test_dataset_normalizes_raw_propensities(tmp_path):
    path = tmp_path / "raw.csv"
    path.write_text("id,y0,y1,p0\na,1,2,0.4\nb,1,2,0.4\nc,1,2,0.4\n")
    spec, _ = load_dataset(path)
    assert spec.budget == 1 and np.allclose(spec.p0, 1 / 3)
    assert spec.unit_ids == ("a", "b", "c")


@pytest.mark.parametrize("text, err, where", [
    ("id,y0,y1\n1,2,3\n", SchemaError, "p0"),
    ("", SchemaError, "empty"),
    ("id,y0,y1,p0\n", SchemaError, "no data"),
    ("id,y0,y1,p0\na,1,2,0.5\nb,1,x,0.5\n", ParseError, ":3: column 'y1'"),
    ("id,y0,y1,p0\na,1,2,0.5\nb,1,2\n", ParseError, ":3:"),
    ("id,y0,y1,p0\na,1,2,0.5\nb,nan,2,0.5\n", ParseError, "non-finite"),
])
def test_dataset_diagnostics(tmp_path, text, err, where):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(err, match=where):
        load_dataset(path)


def test_lipschitz_scenario_structure():
    sc = generate_lipschitz_scenario(LipschitzParams(n_pairs=10))
    spec, out, order = sc
    v = spec.covariates[:, 0]
    assert np.all(np.diff(v[order]) > 0)
    # planted neighbours are delta apart, consecutive pairs gap apart
    pairs = sc.planted_pairs
    assert np.allclose(v[pairs[:, 1]] - v[pairs[:, 0]], sc.delta)
    assert sc.L_M * sc.delta < sc.ell_M * sc.c
    assert out.nonnegative
    assert not np.array_equal(order, np.arange(spec.n))


def test_lipschitz_flat_control_and_invalid():
    sc = generate_lipschitz_scenario(LipschitzParams(f_slope=0, tau_slope=0, p_slope=0))
    assert np.allclose(sc.M, sc.M[0])
    with pytest.raises(InvalidParams):
        generate_lipschitz_scenario(LipschitzParams(delta=2.0, gap=1.0))
    with pytest.raises(InvalidParams):
        generate_lipschitz_scenario(LipschitzParams(f0=-50))

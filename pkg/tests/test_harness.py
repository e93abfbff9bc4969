import csv
import json
import statistics

import numpy as np
import pytest

from swapround.harness import (
    AGGREGATE_COLUMNS,
    METHODS,
    ExperimentConfig,
    ExperimentError,
    emit_results,
    load_summary_config,
    run_experiment,
)
from swapround.datagen import SyntheticConfig, generate_synthetic, save_dataset


def _small(**kw):
    base = dict(n_grid=(12,), scenarios=2, replications=3, methods=("swap", "ipw_independent"))
    base.update(kw)
    return ExperimentConfig(**base)


def test_smoke_contract():
    res = run_experiment(ExperimentConfig(n_grid=(30,), scenarios=1, replications=2, noise_sd=0.0,
                                          methods=("swap",)))
    assert len(res.raw) == 2
    taus = [r["tau_hat"] for r in res.raw]
    assert all(np.isfinite(taus))
    assert res.aggregates[0]["mean_bias"] == pytest.approx(np.mean(taus) - 2.0)


def test_row_count_and_all_methods():
    cfg = _small(n_grid=(10, 14), methods=METHODS, rerand_candidates=5, rerand_replications=100)
    res = run_experiment(cfg)
    assert len(res.raw) == 2 * 2 * 3 * len(METHODS)
    assert [(a["n"], a["method"]) for a in res.aggregates] == [(n, m) for n in (10, 14) for m in METHODS]
    for a in res.aggregates:
        assert 0 <= a["coverage"] <= 1 and a["mean_emp_var"] >= 0 and a["var_ci_lo"] >= 0


def test_byte_identical_outputs(tmp_path):
    cfg = _small()
    p1 = emit_results(run_experiment(cfg), tmp_path / "a")
    p2 = emit_results(run_experiment(cfg), tmp_path / "b")
    assert p1["raw"].read_bytes() == p2["raw"].read_bytes()


def test_worker_count_does_not_change_results():
    cfg = _small(scenarios=3)
    one = run_experiment(cfg).raw
    two = run_experiment(ExperimentConfig(**{**cfg.to_dict(), "workers": 2})).raw
    assert one == two


def test_method_order_in_config_does_not_matter():
    a = run_experiment(_small(methods=("ipw_independent", "swap")))
    b = run_experiment(_small(methods=("swap", "ipw_independent")))
    assert a.raw == b.raw
    assert [r["method"] for r in a.aggregates] == ["swap", "ipw_independent"]


def test_emit_files_and_summary_roundtrip(tmp_path):
    cfg = _small(methods=("swap",))
    res = run_experiment(cfg)
    paths = emit_results(res, tmp_path)
    lines = paths["aggregate"].read_text().splitlines()
    assert lines[0] == ",".join(AGGREGATE_COLUMNS)
    assert len(lines) == 2
    summary = json.loads(paths["summary"].read_text())
    assert summary["master_seed"] == cfg.master_seed and summary["version"]
    assert load_summary_config(paths["summary"]) == cfg
    with pytest.raises(ValueError):
        emit_results(type(res)(cfg, [], []), tmp_path)


def test_aggregates_recomputed_from_raw(tmp_path):
    res = run_experiment(_small(scenarios=4, replications=5))
    paths = emit_results(res, tmp_path)
    with paths["raw"].open() as fh:
        raw = list(csv.DictReader(fh))
    with paths["aggregate"].open() as fh:
        agg = list(csv.DictReader(fh))
    for row in agg:
        mine = [r for r in raw if r["method"] == row["method"] and r["n"] == row["n"]]
        per_scen = {}
        for r in mine:
            per_scen.setdefault(r["scenario"], []).append(float(r["tau_hat"]))
        v = [statistics.variance(x) for x in per_scen.values()]
        assert float(row["mean_emp_var"]) == pytest.approx(statistics.fmean(v), abs=1e-12)
        half = 1.959963984540054 * statistics.stdev(v) / len(v) ** 0.5
        assert float(row["var_ci_hi"]) == pytest.approx(statistics.fmean(v) + half, abs=1e-12)
        bias = statistics.fmean(float(r["tau_hat"]) - float(r["sate"]) for r in mine)
        assert float(row["mean_bias"]) == pytest.approx(bias, abs=1e-12)
        assert float(row["coverage"]) == pytest.approx(statistics.fmean(int(r["covered"]) for r in mine), abs=1e-12)
        assert float(row["mean_sigma_hat"]) == pytest.approx(
            statistics.fmean(float(r["sigma_hat_sq"]) for r in mine), abs=1e-12)


def test_fail_fast_and_skip_errors(tmp_path):
    cfg = _small(methods=("rejection_budget",), rejection_max_tries=1, n_grid=(40,))
    with pytest.raises(ExperimentError, match="scenario=0, method=rejection_budget"):
        run_experiment(cfg)
    res = run_experiment(ExperimentConfig(**{**cfg.to_dict(), "skip_errors": True}))
    assert res.failures
    assert len(res.raw) + len(res.failures) == 2 * 3
    if res.raw:
        paths = emit_results(res, tmp_path)
        assert "failures" in paths


def test_dataset_scenarios(tmp_path):
    spec, out = generate_synthetic(SyntheticConfig(n=40))
    path = tmp_path / "d.csv"
    save_dataset(path, spec, out)
    res = run_experiment(_small(dataset=str(path), n_grid=(20, 40), methods=("swap", "covariate_swap")))
    assert len(res.raw) == 2 * 2 * 3 * 2
    with pytest.raises(ExperimentError):
        run_experiment(_small(dataset=str(path), n_grid=(50,)))


@pytest.mark.parametrize("bad", [dict(scenarios=0), dict(replications=1), dict(methods=()),
                                 dict(methods=("nope",)), dict(alpha=1.0), dict(n_grid=(1,))])
def test_config_invariants(bad):
    with pytest.raises(ValueError):
        ExperimentConfig(**bad)


def test_config_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# demo\nn_grid = 10, 20\nmethods = swap, srs\nscenarios = 3  # inline\nskip_errors = true\n")
    cfg = ExperimentConfig.from_file(path)
    assert cfg.n_grid == (10, 20) and cfg.methods == ("swap", "srs") and cfg.scenarios == 3 and cfg.skip_errors
    with pytest.raises(ValueError):
        ExperimentConfig.from_mapping({"colour": "red"})

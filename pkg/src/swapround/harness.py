"""Config-driven Monte Carlo comparisons of assignment mechanisms.

Every random quantity comes from a generator keyed by its coordinates, e.g.
``(n, scenario, method, replication)``, so results do not depend on the
order in which cells run or on the number of worker processes.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .baselines import (
    RerandConfig,
    bernoulli_assign,
    effective_propensities,
    rejection_budget_assign,
    rerandomize_assign,
    srs_assign,
)
from .core import DesignSpec, OutcomeTable, SwapRoundError, sate, substream, validate_design
from .datagen import SyntheticConfig, generate_synthetic, load_dataset, normalize_budget
from .estimators import confidence_interval, ht_uniform_estimate, ipw_values, self_normalized_values, variance_values
from .ordering import order_covariates
from .rounding import OrderedChain, RandomChain, swap_round

log = logging.getLogger(__name__)

# canonical order; a method's index is part of its random-stream key
METHODS = ("swap", "covariate_swap", "ipw_independent", "rejection_budget", "srs", "rerandomized",
           "self_normalized")
_DATA_KEY = 1000
_EFFP_KEY = 1001

AGGREGATE_COLUMNS = ("method", "n", "mean_emp_var", "var_ci_lo", "var_ci_hi", "mean_bias", "coverage",
                     "mean_sigma_hat", "clamp_rate", "wall_time_s")
RAW_COLUMNS = ("n", "scenario", "method", "replication", "budget", "tau_hat", "sigma_hat_sq", "clamped",
               "ci_low", "ci_high", "sate", "covered")


class ExperimentError(SwapRoundError, RuntimeError):
    """A cell failed; the message carries its coordinates."""


@dataclass(frozen=True)
class ExperimentConfig:
    n_grid: tuple = (100,)
    scenarios: int = 100
    replications: int = 100
    regime: str = "uniform"
    dataset: Optional[str] = None
    methods: tuple = METHODS
    alpha: float = 0.05
    master_seed: int = 0
    tau_true: float = 2.0
    noise_sd: float = 1.0
    clip_low: float = 0.01
    clip_high: float = 0.99
    shift_nonnegative: bool = False
    rerand_candidates: int = 100
    rerand_replications: int = 1000
    rejection_max_tries: int = 100_000
    workers: int = 1
    skip_errors: bool = False
    output_dir: str = "results"

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.scenarios < 1 or self.replications < 2:
            raise ValueError("need scenarios >= 1 and replications >= 2")
        if not self.methods:
            raise ValueError("methods must be nonempty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown method(s) {unknown}; choose from {METHODS}")
        if not self.n_grid or min(self.n_grid) < 2:
            raise ValueError("n_grid needs unit counts >= 2")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        """Build from string or JSON-typed values, coercing by field type."""
        kw = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if key not in fields:
                raise ValueError(f"unknown config key {key!r}")
            default = fields[key].default
            kw[key] = _coerce(raw, default)
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """Read flat ``key = value`` lines; ``#`` starts a comment, lists are comma-separated."""
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        text = Path(path).read_text(encoding="utf-8")
        parser.read_string("[experiment]\n" + text)
        return cls.from_mapping(dict(parser["experiment"]))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["n_grid"] = list(self.n_grid)
        d["methods"] = list(self.methods)
        return d


def _coerce(raw, default):
    if isinstance(default, tuple):
        if isinstance(raw, str):
            items = [s.strip() for s in raw.split(",") if s.strip()]
        else:
            items = list(raw)
        if default and isinstance(default[0], int):
            return tuple(int(x) for x in items)
        return tuple(str(x) for x in items)
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    if isinstance(default, bool):
        if s.lower() in ("1", "true", "yes", "on"):
            return True
        if s.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(s)
    if isinstance(default, float):
        return float(s)
    if default is None:
        return None if s.lower() in ("", "none") else s
    return s


@dataclass
class Scenario:
    n: int
    index: int
    spec: DesignSpec
    outcomes: OutcomeTable
    sate: float
    ordering: Optional[np.ndarray] = None
    effective_p: Optional[np.ndarray] = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    aggregates: list
    raw: list
    scenarios: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def build_scenario(config: ExperimentConfig, n: int, s: int, dataset=None) -> Scenario:
    rng = substream(config.master_seed, n, s, _DATA_KEY)
    if dataset is None:
        syn = SyntheticConfig(n=n, regime=config.regime, tau_true=config.tau_true, noise_sd=config.noise_sd,
                              clip=(config.clip_low, config.clip_high),
                              scenario_seed=int(rng.integers(2**63)),
                              shift_nonnegative=config.shift_nonnegative)
        spec, outcomes = generate_synthetic(syn)
    else:
        spec, outcomes = _subsample(dataset, n, rng)
    sc = Scenario(n, s, spec, outcomes, sate(outcomes))
    if "covariate_swap" in config.methods:
        if spec.covariates is None:
            raise ExperimentError("covariate_swap needs covariates")
        sc.ordering = order_covariates(spec.covariates).permutation
    if "rerandomized" in config.methods:
        rc = RerandConfig(config.rerand_candidates, config.rerand_replications)
        sc.effective_p = effective_propensities(spec, rc, substream(config.master_seed, n, s, _EFFP_KEY))
    return sc


def _subsample(dataset, n, rng):
    spec, outcomes = dataset
    if n > spec.n:
        raise ValueError(f"n={n} exceeds the {spec.n} units in the dataset")
    if n == spec.n:
        return spec, outcomes
    idx = np.sort(rng.choice(spec.n, size=n, replace=False))
    p = spec.p0[idx]
    total = p.sum()
    if abs(total - round(total)) > 1e-9:
        p, budget = normalize_budget(p)
    else:
        budget = int(round(total))
    cov = None if spec.covariates is None else spec.covariates[idx]
    ids = None if spec.unit_ids is None else tuple(spec.unit_ids[i] for i in idx)
    sub = validate_design(DesignSpec(p0=p, budget=budget, covariates=cov, unit_ids=ids))
    return sub, OutcomeTable(y0=outcomes.y0[idx], y1=outcomes.y1[idx])


def run_cell(config: ExperimentConfig, sc: Scenario, method: str, rep: int) -> dict:
    """Draw one assignment with ``method`` and estimate; returns a raw row."""
    rng = substream(config.master_seed, sc.n, sc.index, METHODS.index(method), rep)
    spec, out = sc.spec, sc.outcomes
    p = spec.p0
    pairs = None
    if method in ("swap", "covariate_swap"):
        strategy = RandomChain() if method == "swap" else OrderedChain(sc.ordering)
        draw = swap_round(spec, strategy, rng, validate=False)
        a = draw.assignment
        pairs = draw.trace
        w = p
    elif method in ("ipw_independent", "self_normalized"):
        a = bernoulli_assign(p, rng).assignment
        w = p
    elif method == "rejection_budget":
        a = rejection_budget_assign(p, spec.budget, rng, config.rejection_max_tries).assignment
        w = p
    elif method == "srs":
        a = srs_assign(spec.n, spec.budget, rng).assignment
        w = np.full(spec.n, spec.budget / spec.n)
    elif method == "rerandomized":
        rc = RerandConfig(config.rerand_candidates, config.rerand_replications)
        draw = rerandomize_assign(spec, rc, rng, effective_p=sc.effective_p)
        a, w = draw.assignment, draw.effective_p
    else:
        raise ValueError(method)

    y = out.observed(a)
    if method == "self_normalized":
        tau = float(self_normalized_values(a, y, w))
    elif method == "srs":
        tau = ht_uniform_estimate(y, a, spec.n, spec.budget)
    else:
        tau = float(ipw_values(a, y, w))
    if pairs is not None and len(pairs):
        pr, pv = pairs.pairs, pairs.pre_values
        raw_var = float(variance_values(a, y, w, np.zeros(len(pr), dtype=np.int64), pr[:, 0], pr[:, 1],
                                        pv[:, 0], pv[:, 1])[0])
    else:
        raw_var = float(variance_values(a, y, w, [], [], [], [], [])[0])
    sig = max(raw_var, 0.0)
    lo, hi = confidence_interval(tau, sig, config.alpha)
    return {"n": sc.n, "scenario": sc.index, "method": method, "replication": rep, "budget": spec.budget,
            "tau_hat": tau, "sigma_hat_sq": sig, "clamped": int(raw_var < 0), "ci_low": lo, "ci_high": hi,
            "sate": sc.sate, "covered": int(lo <= sc.sate <= hi)}


def _run_scenario(args):
    config, n, s, dataset = args
    rows, failures, timing = [], [], {}
    try:
        sc = build_scenario(config, n, s, dataset)
    except Exception as exc:
        if not config.skip_errors:
            raise ExperimentError(f"scenario (n={n}, scenario={s}) failed: {exc}") from exc
        return rows, [{"n": n, "scenario": s, "method": "", "replication": -1, "error": repr(exc)}], timing, None
    for method in config.methods:
        t0 = time.perf_counter()
        for rep in range(config.replications):
            try:
                rows.append(run_cell(config, sc, method, rep))
            except Exception as exc:
                if not config.skip_errors:
                    raise ExperimentError(
                        f"cell (n={n}, scenario={s}, method={method}, replication={rep}) failed: {exc}") from exc
                failures.append({"n": n, "scenario": s, "method": method, "replication": rep, "error": repr(exc)})
        timing[method] = time.perf_counter() - t0
    info = {"n": n, "scenario": s, "budget": sc.spec.budget, "sate": sc.sate,
            "negative_outcome_fraction": float(np.mean((sc.outcomes.y0 < 0) | (sc.outcomes.y1 < 0)))}
    return rows, failures, timing, info


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every ``(n, scenario, method, replication)`` cell and aggregate."""
    dataset = load_dataset(config.dataset) if config.dataset else None
    tasks = [(config, n, s, dataset) for n in config.n_grid for s in range(config.scenarios)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as ex:
            results = list(ex.map(_run_scenario, tasks))
    else:
        results = [_run_scenario(t) for t in tasks]

    method_rank = {m: i for i, m in enumerate(METHODS)}
    raw, failures, infos = [], [], []
    wall: dict = {}
    for task, (rows, fails, timing, info) in zip(tasks, results):
        raw.extend(rows)
        failures.extend(fails)
        if info is not None:
            infos.append(info)
        for m, t in timing.items():
            wall[(task[1], m)] = wall.get((task[1], m), 0.0) + t
    raw.sort(key=lambda r: (r["n"], r["scenario"], method_rank[r["method"]], r["replication"]))
    aggregates = aggregate(raw, config.alpha)
    for row in aggregates:
        row["wall_time_s"] = wall.get((row["n"], row["method"]), 0.0)
    return ExperimentResult(config, aggregates, raw, infos, failures)


def aggregate(raw: list, alpha: float = 0.05) -> list:
    """Collapse raw rows into one row per ``(method, n)``.

    The variance interval is a normal interval over scenario-level empirical
    variances (lower end floored at zero).
    """
    method_rank = {m: i for i, m in enumerate(METHODS)}
    groups: dict = {}
    for r in raw:
        groups.setdefault((r["n"], r["method"]), []).append(r)
    out = []
    z = 1.959963984540054
    for (n, method) in sorted(groups, key=lambda k: (k[0], method_rank[k[1]])):
        rows = groups[(n, method)]
        by_scen: dict = {}
        for r in rows:
            by_scen.setdefault(r["scenario"], []).append(r["tau_hat"])
        variances = np.array([np.var(v, ddof=1) for _, v in sorted(by_scen.items()) if len(v) >= 2])
        mean_var = float(variances.mean()) if variances.size else math.nan
        if variances.size >= 2:
            half = z * float(variances.std(ddof=1)) / math.sqrt(variances.size)
        else:
            half = 0.0
        out.append({
            "method": method,
            "n": n,
            "mean_emp_var": mean_var,
            "var_ci_lo": max(mean_var - half, 0.0),
            "var_ci_hi": mean_var + half,
            "mean_bias": float(np.mean([r["tau_hat"] - r["sate"] for r in rows])),
            "coverage": float(np.mean([r["covered"] for r in rows])),
            "mean_sigma_hat": float(np.mean([r["sigma_hat_sq"] for r in rows])),
            "clamp_rate": float(np.mean([r["clamped"] for r in rows])),
            "wall_time_s": 0.0,
        })
    return out


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, columns, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def emit_results(result: ExperimentResult, output_dir=None, formats=("csv", "json")) -> dict:
    """Write ``aggregate.csv``, ``raw.csv`` and optionally ``summary.json``.

    Returns the written paths by name. A ``failures.csv`` sidecar is written
    when cells were skipped.
    """
    if not result.aggregates:
        raise ValueError("nothing to write: no aggregate rows")
    out = Path(output_dir or result.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if "csv" in formats:
        paths["aggregate"] = out / "aggregate.csv"
        paths["raw"] = out / "raw.csv"
        _write_csv(paths["aggregate"], AGGREGATE_COLUMNS, result.aggregates)
        _write_csv(paths["raw"], RAW_COLUMNS, result.raw)
    if result.failures:
        paths["failures"] = out / "failures.csv"
        _write_csv(paths["failures"], ("n", "scenario", "method", "replication", "error"), result.failures)
    if "json" in formats:
        paths["summary"] = out / "summary.json"
        summary = {
            "version": __version__,
            "master_seed": result.config.master_seed,
            "config": result.config.to_dict(),
            "raw_rows": len(result.raw),
            "failures": len(result.failures),
            "scenarios": result.scenarios,
            "aggregates": result.aggregates,
        }
        paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    return paths


def load_summary_config(path) -> ExperimentConfig:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return ExperimentConfig.from_mapping(data["config"])

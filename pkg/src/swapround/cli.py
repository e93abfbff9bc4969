"""Command-line entry point: ``swapround {assign,estimate,order,simulate,validate}``.

Exit codes: 0 success, 2 invalid input (schema, design, config), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import AssignmentDraw, DesignError, Mechanism, SwapRecord, SwapTrace, substream, validate_design
from .datagen import load_dataset
from .estimators import InvalidLevel, estimate, observe
from .harness import ExperimentConfig, emit_results, run_experiment
from .ordering import order_covariates
from .rounding import OrderedChain, RandomChain, SequentialChain, swap_round

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    """Bad input detected by the CLI itself."""


def _strategy(name: str, spec, order_file=None):
    if name == "sequential":
        return SequentialChain()
    if name == "random":
        return RandomChain()
    if name == "ordered":
        if order_file:
            perm = json.loads(Path(order_file).read_text(encoding="utf-8"))["permutation"]
        elif spec.covariates is not None:
            perm = order_covariates(spec.covariates).permutation
        else:
            raise UsageError("ordered strategy needs covariates or --order-file")
        return OrderedChain(perm)
    raise UsageError(f"unknown strategy {name!r}")


def _trace_to_json(trace: SwapTrace) -> list:
    return [dataclasses.asdict(r) for r in trace.records]


def _trace_from_json(items) -> SwapTrace:
    return SwapTrace(tuple(SwapRecord(**r) for r in items))


def cmd_assign(args) -> int:
    spec, _ = load_dataset(args.data)
    rng = substream(args.seed) if args.seed is not None else None
    draw = swap_round(spec, _strategy(args.strategy, spec, args.order_file), rng)
    doc = {
        "version": __version__,
        "strategy": args.strategy,
        "seed": args.seed,
        "budget": spec.budget,
        "unit_ids": list(spec.unit_ids) if spec.unit_ids is not None else None,
        "assignment": [int(x) for x in draw.assignment],
        "trace": _trace_to_json(draw.trace),
    }
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def cmd_estimate(args) -> int:
    spec, outcomes = load_dataset(args.data)
    doc = json.loads(Path(args.assignment).read_text(encoding="utf-8"))
    a = np.asarray(doc["assignment"], dtype=np.int8)
    if len(a) != spec.n:
        raise UsageError(f"assignment has {len(a)} units, dataset has {spec.n}")
    if not np.isin(a, (0, 1)).all():
        raise UsageError("assignment entries must be 0 or 1")
    trace = _trace_from_json(doc.get("trace", []))
    draw = AssignmentDraw(assignment=a, mechanism=Mechanism.SWAP, trace=trace)
    report = estimate(observe(draw, outcomes, spec.p0), alpha=args.alpha, estimator=args.estimator)
    out = {"tau_hat": report.tau_hat, "sigma_hat_sq": report.sigma_hat_sq, "ci_low": report.ci_low,
           "ci_high": report.ci_high, "alpha": report.alpha, "n": report.n, "clamped": report.clamped}
    if args.json:
        print(json.dumps(out, indent=2))
    else:
        for k, v in out.items():
            print(f"{k}\t{v}")
    return EXIT_OK


def cmd_order(args) -> int:
    spec, _ = load_dataset(args.data)
    if spec.covariates is None:
        raise UsageError("dataset has no v_ covariate columns")
    res = order_covariates(spec.covariates, start_rule=args.start_rule, standardize=args.standardize)
    doc = {"permutation": [int(i) for i in res.permutation], "path_length": res.path_length,
           "improvement_passes": res.improvement_passes}
    if spec.unit_ids is not None:
        doc["unit_ids"] = [spec.unit_ids[i] for i in res.permutation]
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    spec, outcomes = load_dataset(args.data, normalize=not args.strict)
    validate_design(spec)
    print(f"ok\tn={spec.n}\tbudget={spec.budget}\tfractional={int(spec.fractional.sum())}"
          f"\tcovariates={0 if spec.covariates is None else spec.covariates.shape[1]}"
          f"\tnonnegative_outcomes={outcomes.nonnegative}")
    return EXIT_OK


_CONFIG_FIELDS = [f.name for f in dataclasses.fields(ExperimentConfig)]


def cmd_simulate(args) -> int:
    values = {}
    try:
        if args.config:
            values.update(ExperimentConfig.from_file(args.config).to_dict())
        for key in _CONFIG_FIELDS:
            v = getattr(args, key, None)
            if v is not None:
                values[key] = v
        config = ExperimentConfig.from_mapping(values)
    except (TypeError, ValueError, configparser.Error) as exc:
        raise UsageError(f"invalid config: {exc}") from exc
    result = run_experiment(config)
    paths = emit_results(result, formats=tuple(args.format.split(",")))
    for name, p in paths.items():
        print(f"{name}\t{p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swapround", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assign", help="draw one budget-exact assignment")
    p.add_argument("data", help="dataset CSV (id, y0, y1, p0, v_*)")
    p.add_argument("--strategy", choices=("sequential", "random", "ordered"), default="sequential")
    p.add_argument("--order-file", help="JSON from `order` (used by --strategy ordered)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("estimate", help="IPW estimate, variance and interval")
    p.add_argument("data")
    p.add_argument("assignment", help="JSON written by `assign`")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--estimator", choices=("ipw", "self_normalized"), default="ipw")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("order", help="covariate ordering for ordered pairing")
    p.add_argument("data")
    p.add_argument("--start-rule", choices=("centroid", "first"), default="centroid")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_order)

    p = sub.add_parser("validate", help="check a dataset's schema and design")
    p.add_argument("data")
    p.add_argument("--strict", action="store_true", help="require p0 to sum to an integer as given")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--format", default="csv,json", help="comma-separated subset of csv,json")
    for f in dataclasses.fields(ExperimentConfig):
        flag = f"--{f.name.replace('_', '-')}"
        if isinstance(f.default, bool):
            p.add_argument(flag, dest=f.name, action="store_const", const="true")
        else:
            p.add_argument(flag, dest=f.name, metavar="VALUE")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DesignError, InvalidLevel, json.JSONDecodeError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

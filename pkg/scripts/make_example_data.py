"""Write a synthetic dataset CSV (id, y0, y1, p0, v_*) for trying the command-line tool.

Usage: python3 scripts/make_example_data.py out.csv [--n 40] [--regime covariate_logistic] [--seed 0]
"""

from __future__ import annotations

import argparse

from swapround.datagen import REGIMES, SyntheticConfig, generate_synthetic, save_dataset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("path")
    ap.add_argument("--n", type=int, default=40)
    ap.add_argument("--regime", choices=REGIMES, default="covariate_logistic")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    spec, outcomes = generate_synthetic(SyntheticConfig(n=args.n, regime=args.regime, scenario_seed=args.seed))
    save_dataset(args.path, spec, outcomes)
    print(f"wrote {args.path}: n={spec.n}, budget={spec.budget}")


if __name__ == "__main__":
    main()

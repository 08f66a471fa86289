#!/usr/bin/env python3
"""Robin model eigenvalues against tau for both one-dimensional models.

Writes ``model_k.csv`` (c = 2 tau B with 2B = 1 by default) and
``model_zero.csv`` (c = 2 tau^2 D with the computed D).
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from brokenstrip.harness import write_csv
from brokenstrip.model1d import RobinModel, Variant, dispersion_eigenvalues
from brokenstrip.scattering import constant_D


def sweep(variant: Variant, constant: float, taus, count: int):
    rows = []
    for tau in taus:
        c = RobinModel.coefficient(variant, tau, constant)
        rows.append([tau, c] + list(dispersion_eigenvalues(RobinModel(c, variant), count).etas))
    return rows


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--two-b", type=float, default=1.0)
    parser.add_argument("--D", type=float, default=None, help="defaults to the computed constant")
    parser.add_argument("--tau-max", type=float, default=30.0)
    parser.add_argument("--steps", type=int, default=241)
    parser.add_argument("--count", type=int, default=4)
    parser.add_argument("--out-dir", type=Path, default=Path("runs/model1d_figure"))
    args = parser.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    D = args.D if args.D is not None else constant_D().D
    taus = np.linspace(-args.tau_max, args.tau_max, args.steps)
    header = ["tau", "c"] + [f"eta_{j}" for j in range(1, args.count + 1)]
    write_csv(args.out_dir / "model_k.csv", header, sweep(Variant.THRESHOLD_K, args.two_b / 2, taus, args.count))
    write_csv(args.out_dir / "model_zero.csv", header, sweep(Variant.ZERO_ANGLE, D, taus, args.count))
    print(f"D = {D:.10f}; wrote model_k.csv and model_zero.csv to {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Eigenvalues of the thin trapezoid along an angle sweep, with the count below the threshold.

Writes ``dive.csv`` (one row per angle, branches followed by continuity) in
the chosen directory.  The default sweep covers [0, 1.45] at eps = 0.02,
which shows the first eigenvalue leaving the threshold at small angles and
the second one diving near the first positive threshold angle.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from brokenstrip.harness import SolveConfig, dive_sweep


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--eps", type=float, default=0.02)
    parser.add_argument("--alpha-max", type=float, default=1.45)
    parser.add_argument("--samples", type=int, default=59)
    parser.add_argument("--count", type=int, default=5)
    parser.add_argument("--mirror", action="store_true", help="also solve at -alpha")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out-dir", type=Path, default=Path("runs/dive_figure"))
    args = parser.parse_args()

    grid = np.linspace(0.0, args.alpha_max, args.samples)
    table = dive_sweep(args.eps, grid, args.count, SolveConfig(), args.mirror, args.workers)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    table.write_csv(args.out_dir / "dive.csv")
    changes = np.flatnonzero(np.diff(table.count_below)) + 1
    for i in changes:
        print(f"count below threshold becomes {table.count_below[i]} between alpha = "
              f"{grid[i - 1]:.4f} and {grid[i]:.4f}")
    print(f"wrote {args.out_dir / 'dive.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

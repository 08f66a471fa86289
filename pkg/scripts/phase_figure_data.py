#!/usr/bin/env python3
"""Threshold scattering coefficient and near-field eigenvalues along the angle.

Writes ``phase.csv`` (S and its unwrapped phase) and ``mu.csv`` (discrete
near-field eigenvalues divided by pi^2) in the chosen directory.
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from brokenstrip.geometry import HalfStripGeom
from brokenstrip.harness import write_csv
from brokenstrip.scattering import covering_L, near_field_discrete_spectrum, scan_phase


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--alpha-max", type=float, default=1.45)
    parser.add_argument("--samples", type=int, default=60)
    parser.add_argument("--mu-samples", type=int, default=15)
    parser.add_argument("--L", type=float, default=8.0)
    parser.add_argument("--h", type=float, default=0.04)
    parser.add_argument("--out-dir", type=Path, default=Path("runs/phase_figure"))
    args = parser.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)

    scan = scan_phase(np.linspace(0.0, args.alpha_max, args.samples), args.L, args.h)
    write_csv(args.out_dir / "phase.csv", ["alpha", "S_real", "S_imag", "phase_unwrapped", "turns"],
              [[s.alpha, s.S.real, s.S.imag, s.phase_unwrapped, (s.phase_unwrapped - math.pi) / (2 * math.pi)]
               for s in scan])

    rows = []
    for a in np.linspace(0.1, args.alpha_max, args.mu_samples):
        nf = near_field_discrete_spectrum(HalfStripGeom(a, covering_L(a, args.L)), args.h, count=6)
        mu = list(nf.mu / math.pi**2) + [""] * (6 - nf.N_circ)
        rows.append([a, nf.N_circ] + mu)
    write_csv(args.out_dir / "mu.csv", ["alpha", "N_circ"] + [f"mu_{j}_over_pi2" for j in range(1, 7)], rows)
    print(f"wrote {args.out_dir / 'phase.csv'} and {args.out_dir / 'mu.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

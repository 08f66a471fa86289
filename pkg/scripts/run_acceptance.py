#!/usr/bin/env python3
"""Run the acceptance suite and print its PASS/FAIL lines.

    python3 scripts/run_acceptance.py            # all criteria (about 5 minutes)
    python3 scripts/run_acceptance.py --fast     # skip the ones marked slow
"""

import argparse
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--fast", action="store_true", help="deselect criteria marked slow")
    parser.add_argument("--log", type=Path, default=None, help="also write the full pytest output here")
    args = parser.parse_args()
    cmd = [sys.executable, "-m", "pytest", str(ROOT / "tests" / "test_acceptance.py"), "-v", "-rxX"]
    if args.fast:
        cmd += ["-m", "not slow"]
    proc = subprocess.run(cmd, cwd=ROOT, capture_output=True, text=True)
    if args.log:
        args.log.write_text(proc.stdout + proc.stderr)
    lines = [ln for ln in proc.stdout.splitlines() if ln.startswith(("PASS criterion", "FAIL criterion"))]
    print("\n".join(lines) if lines else proc.stdout[-4000:])
    return proc.returncode


if __name__ == "__main__":
    sys.exit(main())

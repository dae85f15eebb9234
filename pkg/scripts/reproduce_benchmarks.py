#!/usr/bin/env python3
"""Run the offline workflow on every bundled problem and print a summary.

Artifacts land under out/<problem>/ (trace, value grids, final polynomials).
"""

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from polypi.cli import main  # noqa: E402

PROBLEMS = ["lqr_toy", "integrator_toy", "scalar_a", "planar_b",
            "fourstate_c"]

if __name__ == "__main__":
    out_root = ROOT / "out"
    failures = 0
    for name in PROBLEMS:
        out = out_root / name
        print(f"=== offline {name} ===")
        code = main(["offline",
                     "--problem", str(ROOT / "problems" / f"{name}.toml"),
                     "--out", str(out),
                     "--max-iter", "4" if name == "fourstate_c" else "10"])
        failures += code != 0
    sys.exit(1 if failures else 0)

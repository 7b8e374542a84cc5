#!/usr/bin/env python3
"""Run the four benchmark studies and build the comparison report.

Adaptive runs for ex1..ex4 (plus a uniform baseline for ex1), each with
SVG plots, then one overlay report.  Takes several minutes at the default
budgets; pass --quick for a fast smoke pass.
"""

import argparse
import subprocess
import sys
from pathlib import Path


def sh(*args):
    print("+", " ".join(args))
    res = subprocess.run([sys.executable, "-m", "morley_ocp", *args])
    if res.returncode != 0:
        sys.exit(res.returncode)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs")
    ap.add_argument("--quick", action="store_true",
                    help="small DOF budgets for a smoke pass")
    args = ap.parse_args()
    out = Path(args.out)

    budgets = {"ex1": 45000, "ex2": 25000, "ex3": 30000, "ex4": 20000}
    if args.quick:
        budgets = {k: 2000 for k in budgets}

    for name, dofs in budgets.items():
        sh("solve", "--problem", name, "--theta", "0.3",
           "--max-dofs", str(dofs), "--out", str(out / name), "--svg")
    sh("solve", "--problem", "ex1", "--uniform",
       "--max-dofs", str(budgets["ex1"]), "--out", str(out / "ex1-uniform"),
       "--svg")
    sh("report", *[str(out / n / "run.json")
                   for n in ("ex1", "ex1-uniform", "ex2", "ex3", "ex4")],
       "--out", str(out / "report"))
    print(f"done; see {out}/report/comparison.svg")


if __name__ == "__main__":
    main()

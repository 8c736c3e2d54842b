#!/usr/bin/env python3
"""First-maximum fidelity maps of the XX chain over (h1, h2) for both
variants, followed by conic fits of the no-gain boundaries.

Outputs go to <out>/nh and <out>/hermitian: sweep.csv, sweep.jsonl,
first_max_F.dat / regime.dat (gnuplot matrices), boundary.csv, conic.json.
"""

from __future__ import annotations

import argparse
import sys

from nhqst.cli import main


def run(argv: list[str]) -> None:
    code = main(argv)
    if code:
        sys.exit(code)


def parse_args() -> argparse.Namespace:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--steps1", type=int, default=101, help="h1 points on [0, 1]")
    p.add_argument("--steps2", type=int, default=51, help="h2 points on [0, 0.5]")
    p.add_argument("--out", default="runs/xx")
    p.add_argument("--threads", default=None)
    return p.parse_args()


if __name__ == "__main__":
    a = parse_args()
    extra = ["--threads", a.threads] if a.threads else []
    for variant, shape, regime in (("nh", "ellipse", "unbroken"), ("hermitian", "hyperbola", "any")):
        out = f"{a.out}/{variant}"
        run(["sweep", "--model", "xx", "--n", str(a.n), "--variant", variant,
             "--axis1", f"h1:0:1:{a.steps1}", "--axis2", f"h2:0:0.5:{a.steps2}",
             "--out", out, "--resume", *extra])
        run(["fit", "--out", out, "--kind", shape, "--regime", regime, "--link", "0.05"])

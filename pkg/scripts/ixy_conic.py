#!/usr/bin/env python3
"""iXY chain: F^(1) over (h, gamma) by full-space evolution with a numeric
Haar average, then a conic through the points where F^(1) just reaches 2/3.

F^(1) does not cross 2/3 smoothly: the earliest peak above threshold sinks
to 2/3 and the next peak takes over. The fitted points are those sub-grid
drop locations with 1 < h <= 3; the best-fitting cluster is kept. The
non-Hermitian map is fitted with a hyperbola, the Hermitian one with an
ellipse.
"""

from __future__ import annotations

import argparse
import sys

from nhqst.cli import main


def run(argv: list[str]) -> None:
    code = main(argv)
    if code:
        sys.exit(code)


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--h-steps", type=int, default=126, help="h points on [1, 3.5]")
    p.add_argument("--gamma-steps", type=int, default=25, help="gamma points on [0, 1.2]")
    p.add_argument("--out", default="runs/ixy")
    p.add_argument("--threads", default=None)
    a = p.parse_args()
    extra = ["--threads", a.threads] if a.threads else []
    for variant, shape in (("nh", "hyperbola"), ("hermitian", "ellipse")):
        out = f"{a.out}/{variant}"
        run(["sweep", "--model", "ixy", "--n", str(a.n), "--variant", variant,
             "--axis1", f"h:1:3.5:{a.h_steps}", "--axis2", f"gamma:0:1.2:{a.gamma_steps}",
             "--out", out, "--resume", *extra])
        run(["fit", "--out", out, "--kind", shape, "--method", "drop", "--min-value1", "1",
             "--max-value1", "3", "--anchor", "residual", "--min-points", "20", "--link", "0.08"])

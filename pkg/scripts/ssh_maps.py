#!/usr/bin/env python3
"""First-maximum fidelity maps of the SSH chain for several inter/intra
coupling ratios, both variants.

Prints the best F^(1) per map and whether any broken-regime point beats 2/3.
With --fit the no-gain boundary of each map is fitted (ellipse for the
non-Hermitian variant, hyperbola for the Hermitian one).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from nhqst.analysis import SweepStore
from nhqst.cli import main
from nhqst.spectral import BROKEN


def run(argv: list[str]) -> None:
    code = main(argv)
    if code:
        sys.exit(code)


def report(path: Path) -> str:
    recs = list(SweepStore(path).load().values())
    gains = [r.first_max_F for r in recs if r.gain]
    broken_gain = [r for r in recs if r.regime == BROKEN and r.gain]
    best = f"{max(gains):.4f}" if gains else "none"
    return f"max F1 {best}; broken points above 2/3: {len(broken_gain)}"


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--ratios", default="0.5,1.2,2.0")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--steps", type=int, default=101, help="points per axis on [0, 1]")
    p.add_argument("--fit", action="store_true")
    p.add_argument("--out", default="runs/ssh")
    p.add_argument("--threads", default=None)
    a = p.parse_args()
    extra = ["--threads", a.threads] if a.threads else []
    for j2 in a.ratios.split(","):
        for variant, shape, regime in (("nh", "ellipse", "unbroken"), ("hermitian", "hyperbola", "any")):
            out = f"{a.out}/j2_{j2}/{variant}"
            run(["sweep", "--model", "ssh", "--n", str(a.n), "--j2", j2, "--variant", variant,
                 "--axis1", f"h1:0:1:{a.steps}", "--axis2", f"h2:0:1:{a.steps}",
                 "--out", out, "--resume", *extra])
            print(f"J2={j2} {variant}: {report(Path(out) / 'sweep.jsonl')}")
            if a.fit:
                run(["fit", "--out", out, "--kind", shape, "--regime", regime, "--link", "0.05"])

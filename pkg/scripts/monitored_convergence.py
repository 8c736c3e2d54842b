#!/usr/bin/env python3
"""Post-selected monitored trajectory against the non-Hermitian evolution:
deviation at step dt and dt/2, whose ratio should approach 2."""

from __future__ import annotations

import argparse
import sys

from nhqst.cli import main

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", default="4")
    p.add_argument("--h1", default="0.2")
    p.add_argument("--h2", default="0.1")
    p.add_argument("--T", default="5")
    p.add_argument("--step", default="1e-3")
    p.add_argument("--out", default="runs/trajectory")
    a = p.parse_args()
    sys.exit(main(["trajectory", "--model", "xx", "--n", a.n, "--h1", a.h1, "--h2", a.h2,
                   "--T", a.T, "--step", a.step, "--halve", "--out", a.out]))

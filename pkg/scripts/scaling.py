#!/usr/bin/env python3
"""Finite-size scaling of the optimized first-maximum fidelity,
F_max(N) ~ c N^alpha, for the XX chain and SSH chains at two ratios."""

from __future__ import annotations

import argparse
import sys

from nhqst.cli import main

CASES = {
    "xx": ["--model", "xx"],
    "ssh-1.2": ["--model", "ssh", "--j2", "1.2"],
    "ssh-1.4": ["--model", "ssh", "--j2", "1.4"],
}

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--cases", default=",".join(CASES))
    p.add_argument("--sizes", default="8,12,16,24,32,48,64")
    p.add_argument("--out", default="runs/scaling")
    p.add_argument("--threads", default=None)
    a = p.parse_args()
    extra = ["--threads", a.threads] if a.threads else []
    for case in a.cases.split(","):
        print(case, end=": ", flush=True)
        code = main(["scaling", *CASES[case], "--n", "8", "--sizes", a.sizes,
                     "--out", f"{a.out}/{case}", *extra])
        if code:
            sys.exit(code)

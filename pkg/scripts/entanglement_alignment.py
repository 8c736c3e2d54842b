#!/usr/bin/env python3
"""Entanglement E(t) between the receiver and the rest of the chain next to
F(t), with the peak-alignment check, for an unbroken and a broken XX chain."""

from __future__ import annotations

import argparse
import sys

from nhqst.cli import main

POINTS = {"unbroken": ("0.2", "0.06"), "broken": ("0.5", "0.19")}

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", default="16")
    p.add_argument("--out", default="runs/entanglement")
    a = p.parse_args()
    for name, (h1, h2) in POINTS.items():
        code = main(["entanglement", "--model", "xx", "--n", a.n, "--h1", h1, "--h2", h2,
                     "--out", f"{a.out}/{name}"])
        if code:
            sys.exit(code)

"""Output writers: CSV with fixed 17-significant-digit floats, JSON written
atomically, and gnuplot-ready nonuniform matrices."""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return "%.17g" % x
    return str(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default)


def atomic_write_text(path, text: str) -> Path:
    """Write via a temporary file in the same directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj) -> Path:
    return atomic_write_text(path, to_json(obj) + "\n")


def write_gnuplot_matrix(path, x, y, Z) -> Path:
    """Nonuniform matrix: first row ``n x_1 .. x_n``, then ``y_i z_i1 .. z_in``.

    Plot with ``plot 'file' nonuniform matrix with image``; rows follow ``y``.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (len(y), len(x)):
        raise ValueError("matrix shape must be (len(y), len(x))")
    lines = [" ".join([fmt(len(x))] + [fmt(v) for v in x])]
    for yi, row in zip(y, Z):
        lines.append(" ".join([fmt(float(yi))] + [fmt(float(v)) for v in row]))
    return atomic_write_text(path, "\n".join(lines) + "\n")

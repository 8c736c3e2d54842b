"""Parameter-plane sweeps, no-gain boundary extraction and conic fits,
fidelity optimization over the fields, and finite-size scaling fits."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.optimize import minimize

from .dynamics import TimeGrid
from .linalg import LinalgError
from .models import ModelSpec
from .spectral import UNBROKEN, classify_model
from .transfer import (
    CLASSICAL_THRESHOLD,
    HaarQuadrature,
    fidelity_curve,
    haar_fidelity_curve,
    transfer_metrics,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class Axis:
    name: str
    start: float
    stop: float
    steps: int

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError(f"axis {self.name!r} needs at least 2 steps")
        if not (math.isfinite(self.start) and math.isfinite(self.stop)):
            raise ValueError(f"axis {self.name!r} range must be finite")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.steps)

    @classmethod
    def with_step(cls, name: str, start: float, stop: float, step: float) -> "Axis":
        return cls(name, start, stop, int(round((stop - start) / step)) + 1)


@dataclass
class SweepRecord:
    axis1: str
    value1: float
    axis2: str
    value2: float
    regime: str | None = None
    first_max_F: float | None = None
    first_max_t: float | None = None
    t_min: float | None = None
    max_F: float | None = None  # largest F seen on the searched part of the curve
    run_id: str = ""
    error: str | None = None

    @property
    def gain(self) -> bool:
        return self.first_max_F is not None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "SweepRecord":
        return cls(**json.loads(line))


def canonical_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def point_key(spec: ModelSpec, grid: TimeGrid, extra: dict | None = None) -> str:
    return canonical_hash({"model": spec.to_dict(), "grid": grid.to_dict(), **(extra or {})})


def evaluate_point(spec: ModelSpec, grid: TimeGrid, quadrature_order: int = 16) -> dict:
    """Regime and transfer metrics of one parameter point (never raises)."""
    out: dict = {}
    try:
        out["regime"] = classify_model(spec).regime
        if spec.u1:
            curve = fidelity_curve(spec, grid)
        else:
            q = HaarQuadrature(quadrature_order, quadrature_order)
            curve = haar_fidelity_curve(spec, grid, q, stop_after_first_max=True)
        m = transfer_metrics(curve)
        out.update(
            first_max_F=m.first_max_F,
            first_max_t=m.first_max_t,
            t_min=m.t_min,
            max_F=float(np.nanmax(curve.F)),
        )
    except (LinalgError, ValueError, FloatingPointError) as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def _eval_task(args):
    spec, grid, order = args
    return evaluate_point(spec, grid, order)


class SweepStore:
    """Append-only JSON-lines store of SweepRecords keyed by ``run_id``."""

    def __init__(self, path):
        self.path = Path(path)

    def load(self) -> dict[str, SweepRecord]:
        found: dict[str, SweepRecord] = {}
        if not self.path.exists():
            return found
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.endswith("\n"):
                    break  # torn final line from an interrupted write
                try:
                    rec = SweepRecord.from_json(line)
                except (json.JSONDecodeError, TypeError):
                    continue
                found[rec.run_id] = rec
        return found

    def append(self, records) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            self._repair_tail(fh)
            for rec in records:
                fh.write(rec.to_json() + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _repair_tail(self, fh) -> None:
        # make sure a torn line from a crash is terminated before appending
        if self.path.stat().st_size == 0:
            return
        with open(self.path, "rb") as rb:
            rb.seek(-1, os.SEEK_END)
            if rb.read(1) != b"\n":
                fh.write("\n")


def default_workers() -> int:
    env = os.environ.get("NHQST_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def sweep_plane(
    template: ModelSpec,
    axis1: Axis,
    axis2: Axis,
    grid: TimeGrid | None = None,
    workers: int | None = None,
    store: SweepStore | str | os.PathLike | None = None,
    quadrature_order: int = 16,
    chunk: int = 64,
) -> list[SweepRecord]:
    """One record per lattice point, axis1 outer and axis2 inner.

    With a ``store`` already-computed keys are reused and new ones appended
    chunk by chunk, so an interrupted sweep resumes where it stopped.
    """
    grid = grid or TimeGrid()
    workers = workers or default_workers()
    if store is not None and not isinstance(store, SweepStore):
        store = SweepStore(store)
    done = store.load() if store is not None else {}

    points = []
    for v1 in axis1.values:
        for v2 in axis2.values:
            spec = template.with_(**{axis1.name: float(v1), axis2.name: float(v2)})
            extra = None if spec.u1 else {"quadrature_order": quadrature_order}
            points.append((float(v1), float(v2), spec, point_key(spec, grid, extra)))

    todo = [p for p in points if p[3] not in done]
    results: dict[str, SweepRecord] = {}
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 and len(todo) > 1 else None
    try:
        for start in range(0, len(todo), chunk):
            part = todo[start : start + chunk]
            tasks = [(p[2], grid, quadrature_order) for p in part]
            outs = pool.map(_eval_task, tasks) if pool else map(_eval_task, tasks)
            batch = []
            for (v1, v2, _, key), out in zip(part, outs):
                rec = SweepRecord(axis1.name, v1, axis2.name, v2, run_id=key, **out)
                results[key] = rec
                batch.append(rec)
            if store is not None:
                store.append(batch)
    finally:
        if pool:
            pool.shutdown()
    return [done.get(key) or results[key] for (_, _, _, key) in points]


def lattice(records: list[SweepRecord]):
    """(values1, values2, index) where index[(i, j)] is the record at lattice (i, j)."""
    v1 = sorted({r.value1 for r in records})
    v2 = sorted({r.value2 for r in records})
    p1 = {v: i for i, v in enumerate(v1)}
    p2 = {v: j for j, v in enumerate(v2)}
    index = {(p1[r.value1], p2[r.value2]): r for r in records}
    return np.array(v1), np.array(v2), index


def records_matrix(records: list[SweepRecord], attr: str = "first_max_F") -> tuple:
    """Dense matrix of one record attribute (NaN where absent), rows = axis1."""
    v1, v2, index = lattice(records)
    M = np.full((len(v1), len(v2)), np.nan)
    for (i, j), r in index.items():
        val = getattr(r, attr)
        if val is not None:
            M[i, j] = val
    return v1, v2, M


# ---------------------------------------------------------------------------
# no-gain boundary


def _score(r: SweepRecord) -> float | None:
    if r.error is not None:
        return None
    if r.first_max_F is not None:
        return r.first_max_F
    return r.max_F


def extract_no_gain_boundary(
    records: list[SweepRecord],
    regime: str | None = UNBROKEN,
    exclude=None,
    threshold: float = CLASSICAL_THRESHOLD,
) -> np.ndarray:
    """Sub-grid points where the first-maximum fidelity crosses ``threshold``.

    Gain points score their first maximum above threshold, no-gain points the
    largest fidelity reached within the horizon; the crossing between lattice
    neighbours of opposite kind is located by linear interpolation of the
    score. Returns an (M, 2) array of (value1, value2). ``regime`` keeps only
    neighbour pairs that both lie in that regime (None keeps all); ``exclude``
    is an optional predicate on records.
    """
    if not records:
        return np.empty((0, 2))
    v1, v2, index = lattice(records)

    def usable(r):
        if r is None or _score(r) is None:
            return False
        if regime is not None and r.regime != regime:
            return False
        return not (exclude and exclude(r))

    pts = []
    for (i, j), r in sorted(index.items()):
        if not usable(r):
            continue
        for di, dj in ((1, 0), (0, 1)):
            q = index.get((i + di, j + dj))
            if not usable(q) or r.gain == q.gain:
                continue
            a, b = _score(r) - threshold, _score(q) - threshold
            if a == b:
                continue
            s = a / (a - b)
            s = min(max(s, 0.0), 1.0)
            pts.append(
                (r.value1 + s * (q.value1 - r.value1), r.value2 + s * (q.value2 - r.value2))
            )
    if not pts:
        log.info("no gain/no-gain neighbour pairs found; boundary is empty")
    return np.array(pts, dtype=float).reshape(-1, 2)


def extract_threshold_band(
    records: list[SweepRecord],
    tolerance: float = 0.005,
    regime: str | None = None,
    exclude=None,
    threshold: float = CLASSICAL_THRESHOLD,
) -> np.ndarray:
    """Lattice points whose first maximum only just clears ``threshold``.

    Keeps gain points with ``0 <= first_max_F - threshold <= tolerance``; this
    traces the curves where F^(1) reaches the threshold when the fidelity
    landscape jumps instead of crossing it smoothly.
    """
    pts = [
        (r.value1, r.value2)
        for r in records
        if r.error is None
        and r.gain
        and r.first_max_F - threshold <= tolerance
        and (regime is None or r.regime == regime)
        and not (exclude and exclude(r))
    ]
    return np.array(pts, dtype=float).reshape(-1, 2)


def extract_first_max_drop(
    records: list[SweepRecord],
    max_excess: float = 0.02,
    min_jump: float = 0.5,
    exclude=None,
    threshold: float = CLASSICAL_THRESHOLD,
) -> np.ndarray:
    """Sub-grid points where the earliest above-threshold peak sinks to ``threshold``.

    When the first maximum falls to the threshold the next peak takes over,
    so F^(1) jumps instead of crossing smoothly. A lattice edge qualifies if
    both ends gain, their first-maximum times differ by at least ``min_jump``
    and the early-peak end sits within ``max_excess`` of the threshold. The
    crossing is placed by extrapolating the early peak's own slope (from its
    neighbour on the far side) to the threshold, clipped to the edge; without
    a usable neighbour the edge midpoint is used.
    """
    if not records:
        return np.empty((0, 2))
    v1, v2, index = lattice(records)

    def usable(r):
        return r is not None and r.error is None and r.gain and not (exclude and exclude(r))

    pts = []
    for (i, j), r in sorted(index.items()):
        for di, dj in ((1, 0), (0, 1)):
            q = index.get((i + di, j + dj))
            if not (usable(r) and usable(q)) or abs(q.first_max_t - r.first_max_t) < min_jump:
                continue
            e, far, sign = (r, (i - di, j - dj), 1) if r.first_max_t < q.first_max_t else (q, (i + 2 * di, j + 2 * dj), -1)
            excess = e.first_max_F - threshold
            if excess > max_excess:
                continue
            p = index.get(far)
            s = 0.5
            if usable(p) and abs(p.first_max_t - e.first_max_t) < min_jump and p.first_max_F > e.first_max_F:
                s = min(excess / (p.first_max_F - e.first_max_F), 1.0)
            other = q if e is r else r
            pts.append((e.value1 + s * (other.value1 - e.value1), e.value2 + s * (other.value2 - e.value2)))
    return np.array(pts, dtype=float).reshape(-1, 2)


# ---------------------------------------------------------------------------
# conic fits


class ConicFitError(ValueError):
    def __init__(self, message: str, u: float, v: float):
        super().__init__(f"{message} (u={u:.6g}, v={v:.6g})")
        self.u, self.v = u, v


@dataclass(frozen=True)
class ConicFit:
    """u*y^2 + v*x^2 = 1 with y the first column of the points (h1 or h) and x
    the second (h2 or gamma); b = 1/sqrt(u), a = 1/sqrt|v|."""

    kind: str
    a: float
    b: float
    residual: float
    n_points: int
    u: float = 0.0
    v: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _conic_values(points, u, v):
    y, x = points[:, 0], points[:, 1]
    return u * y**2 + v * x**2 - 1.0


def _check_kind(kind: str) -> str:
    kind = kind.lower()
    if kind not in ("ellipse", "hyperbola"):
        raise ValueError("kind must be 'ellipse' or 'hyperbola'")
    return kind


def fit_conic(points, kind: str) -> ConicFit:
    """Least squares on u*y^2 + v*x^2 = 1; v > 0 for an ellipse, v < 0 for a hyperbola."""
    kind = _check_kind(kind)
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(P) < 8:
        raise ValueError(f"need at least 8 points, got {len(P)}")
    A = np.column_stack([P[:, 0] ** 2, P[:, 1] ** 2])
    (u, v), *_ = np.linalg.lstsq(A, np.ones(len(P)), rcond=None)
    bad_v = v <= 0 if kind == "ellipse" else v >= 0
    if u <= 0 or bad_v:
        raise ConicFitError(f"degenerate {kind} fit", float(u), float(v))
    res = float(np.sqrt(np.mean(_conic_values(P, u, v) ** 2)))
    return ConicFit(kind, 1 / math.sqrt(abs(v)), 1 / math.sqrt(u), res, len(P), float(u), float(v))


def boundary_clusters(points, link: float, anchor: str = "origin") -> list[np.ndarray]:
    """Single-linkage clusters of boundary points.

    With ``anchor="origin"`` clusters are ordered by the median distance of
    their points from the origin of the parameter plane (innermost first).
    With ``anchor="axis"`` the cluster reaching closest to the x = 0 axis
    (second column) comes first, larger clusters breaking ties.
    """
    if anchor not in ("origin", "axis"):
        raise ValueError("anchor must be 'origin' or 'axis'")
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(P) == 0:
        return []
    if len(P) == 1:
        return [P]
    labels = fcluster(linkage(P, "single"), link, "distance")
    groups = [P[labels == c] for c in np.unique(labels)]
    if anchor == "origin":
        groups.sort(key=lambda g: (float(np.median(np.hypot(g[:, 0], g[:, 1]))), -len(g)))
    else:
        groups.sort(key=lambda g: (float(np.min(np.abs(g[:, 1]))), -len(g)))
    return groups


BRANCH_RULES = ("origin", "axis", "residual")


def fit_conic_branch(
    points, kind: str, link: float, min_points: int = 8, anchor: str = "origin"
) -> ConicFit:
    """Fit one boundary cluster with a conic of ``kind``.

    Sweeps often show several separate threshold curves. ``anchor`` picks
    the branch: "origin" takes the innermost cluster that supports the conic
    (the curve nearest zero field), "axis" the first supporting cluster in
    ``boundary_clusters(..., anchor="axis")`` order, and "residual" fits
    every cluster of at least ``min_points`` and keeps the best-fitting one.
    """
    if anchor not in BRANCH_RULES:
        raise ValueError(f"anchor must be one of {BRANCH_RULES}")
    order = "axis" if anchor == "axis" else "origin"
    errors, fits = [], []
    for g in boundary_clusters(points, link, order):
        if len(g) < min_points:
            continue
        try:
            fit = fit_conic(g, kind)
        except ConicFitError as exc:
            errors.append(str(exc))
            continue
        if anchor != "residual":
            return fit
        fits.append(fit)
    if fits:
        return min(fits, key=lambda f: f.residual)
    raise ValueError("no boundary cluster supports an %s fit%s" % (kind, f": {errors}" if errors else ""))


# ---------------------------------------------------------------------------
# optimization and scaling


@dataclass(frozen=True)
class OptimumResult:
    params: dict
    F_max: float
    gain: bool  # False: nothing beat the threshold; F_max is the best sub-threshold value
    evaluations: int = 0


def _objective_value(spec: ModelSpec, grid: TimeGrid, regime: str | None):
    try:
        if regime is not None and classify_model(spec).regime != regime:
            return None, None
        m = transfer_metrics(fidelity_curve(spec, grid))
    except (LinalgError, ValueError):
        return None, None
    if m.first_max_F is not None:
        return m.first_max_F, True
    return None, False


def optimize_fidelity(
    template: ModelSpec,
    bounds=((0.0, 1.0), (0.0, 1.0)),
    grid: TimeGrid | None = None,
    axes: tuple[str, str] = ("h1", "h2"),
    coarse: int = 21,
    seeds: int = 3,
    regime: str | None = None,
    workers: int = 1,
) -> OptimumResult:
    """Maximize the first-maximum fidelity over two fields.

    A coarse ``coarse`` x ``coarse`` lattice seeds bounded Nelder-Mead runs from
    its ``seeds`` best points. ``regime`` restricts the search to Unbroken or
    Broken points.
    """
    grid = grid or TimeGrid()
    (lo1, hi1), (lo2, hi2) = bounds
    a1 = Axis(axes[0], lo1, hi1, coarse)
    a2 = Axis(axes[1], lo2, hi2, coarse)
    recs = sweep_plane(template, a1, a2, grid, workers=workers)
    evals = len(recs)

    def ok(r):
        return r.error is None and (regime is None or r.regime == regime)

    gains = [r for r in recs if ok(r) and r.gain]
    if not gains:
        pool = [r for r in recs if ok(r) and r.max_F is not None]
        if not pool:
            return OptimumResult({}, float("nan"), False, evals)
        b = max(pool, key=lambda r: r.max_F)
        return OptimumResult({axes[0]: b.value1, axes[1]: b.value2}, b.max_F, False, evals)

    gains.sort(key=lambda r: -r.first_max_F)
    best_val = gains[0].first_max_F
    best_par = (gains[0].value1, gains[0].value2)
    for r in gains[:seeds]:

        def neg(x):
            nonlocal evals, best_val, best_par
            evals += 1
            x1 = min(max(x[0], lo1), hi1)
            x2 = min(max(x[1], lo2), hi2)
            val, _ = _objective_value(template.with_(**{axes[0]: x1, axes[1]: x2}), grid, regime)
            if val is None:
                return 1.0
            if val > best_val:
                best_val, best_par = val, (x1, x2)
            return -val

        step1 = (hi1 - lo1) / (coarse - 1)
        step2 = (hi2 - lo2) / (coarse - 1)
        x0 = np.array([r.value1, r.value2])
        simplex = np.array([x0, x0 + [step1 / 2, 0], x0 + [0, step2 / 2]])
        minimize(
            neg,
            x0,
            method="Nelder-Mead",
            bounds=[(lo1, hi1), (lo2, hi2)],
            options={"initial_simplex": simplex, "xatol": 1e-3, "fatol": 1e-3, "maxiter": 200},
        )
    return OptimumResult({axes[0]: best_par[0], axes[1]: best_par[1]}, best_val, True, evals)


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    prefactor: float
    r2: float
    sizes: list
    F_max: list
    excluded: list = field(default_factory=list)
    optima: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def power_law_fit(sizes, values) -> tuple[float, float, float]:
    """(alpha, c, r^2) of log F = log c + alpha log N."""
    x, y = np.log(np.asarray(sizes, float)), np.log(np.asarray(values, float))
    alpha, logc = np.polyfit(x, y, 1)
    pred = logc + alpha * x
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(alpha), float(math.exp(logc)), r2


def scaling_fit(
    template: ModelSpec,
    sizes,
    bounds=((0.0, 1.0), (0.0, 1.0)),
    grid: TimeGrid | None = None,
    coarse: int = 21,
    workers: int = 1,
) -> ScalingFit:
    """Optimize F^(1) for each chain length and fit a power law in N."""
    sizes = [int(n) for n in sizes]
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    if template.kind == "ssh" and any(n % 2 for n in sizes):
        raise ValueError("SSH sizes must be even")
    used, vals, excluded, optima = [], [], [], []
    for n in sizes:
        res = optimize_fidelity(template.with_(n_sites=n), bounds, grid, coarse=coarse, workers=workers)
        optima.append({"n": n, "F_max": res.F_max, "gain": res.gain, **res.params})
        if not res.gain:
            log.warning("N=%d never beats the classical threshold; excluded from fit", n)
            excluded.append(n)
            continue
        used.append(n)
        vals.append(res.F_max)
    if len(used) < 5:
        raise ValueError(f"scaling fit needs at least 5 sizes with gain, have {len(used)}")
    alpha, c, r2 = power_law_fit(used, vals)
    return ScalingFit(alpha, c, r2, used, vals, excluded, optima)

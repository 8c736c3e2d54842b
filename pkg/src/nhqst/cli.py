"""Command-line front end.

Every subcommand reads an optional INI config (``--config``) whose sections
mirror the run configuration; any key can be overridden by a flag. Exit codes:
0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    Axis,
    SweepStore,
    canonical_hash,
    default_workers,
    extract_no_gain_boundary,
    extract_first_max_drop,
    extract_threshold_band,
    fit_conic_branch,
    records_matrix,
    scaling_fit,
    sweep_plane,
)
from .dynamics import TimeGrid, initial_state
from .entanglement import entanglement_trace, peak_alignment
from .io import write_csv, write_gnuplot_matrix, write_json
from .linalg import LinalgError
from .models import ModelSpec
from .monitored import trajectory_vs_nh
from .spectral import BROKEN, UNBROKEN, NoSignChangeError, classify_model
from .transfer import (
    HaarQuadrature,
    fidelity_curve,
    haar_fidelity_curve,
    transfer_metrics,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("nhqst")


class ConfigError(ValueError):
    pass


# section -> key -> (type, flag dest)
SCHEMA: dict[str, dict[str, tuple[type, str]]] = {
    "model": {
        "kind": (str, "model"),
        "n_sites": (int, "n"),
        "coupling": (float, "coupling"),
        "j2_ratio": (float, "j2"),
        "h1": (float, "h1"),
        "h2": (float, "h2"),
        "h": (float, "h"),
        "gamma": (float, "gamma"),
        "variant": (str, "variant"),
        "field_sign": (int, "field_sign"),
        "stagger_sign": (int, "stagger_sign"),
    },
    "time": {"t_max": (float, "t_max"), "dt": (float, "dt")},
    "sweep": {
        "axis1": (str, "axis1"),
        "axis2": (str, "axis2"),
        "quadrature_order": (int, "quadrature_order"),
    },
    "output": {"directory": (str, "out"), "formats": (str, "formats")},
    "run": {"threads": (int, "threads"), "seed": (int, "seed")},
}

DEFAULTS = {
    ("time", "t_max"): 200.0,
    ("time", "dt"): 0.05,
    ("sweep", "quadrature_order"): 16,
    ("output", "directory"): ".",
    ("output", "formats"): "csv,json",
    ("run", "seed"): 0,
}


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    time: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {s: dict(getattr(self, s)) for s in SCHEMA}

    @property
    def hash(self) -> str:
        """Hash of everything that affects results (not where they go or how many workers)."""
        d = self.as_dict()
        d["output"].pop("directory", None)
        d["run"].pop("threads", None)
        return canonical_hash(d)

    @property
    def out_dir(self) -> Path:
        return Path(self.output.get("directory", "."))

    @property
    def threads(self) -> int:
        return int(self.run.get("threads") or default_workers())

    def model_spec(self, **overrides) -> ModelSpec:
        data = {k: v for k, v in self.model.items() if v is not None}
        data.update(overrides)
        if "kind" not in data:
            raise ConfigError("missing required field model.kind (--model)")
        if "n_sites" not in data:
            raise ConfigError("missing required field model.n_sites (--n)")
        try:
            return ModelSpec(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model: {exc}") from exc

    def time_grid(self) -> TimeGrid:
        try:
            return TimeGrid(float(self.time["t_max"]), float(self.time["dt"]))
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid time block: {exc}") from exc


def _convert(section: str, key: str, raw):
    typ = SCHEMA[section][key][0]
    try:
        return typ(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {typ.__name__}") from exc


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    out: dict = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            out[(section, key)] = _convert(section, key, raw)
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    values = dict(DEFAULTS)
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for section, keys in SCHEMA.items():
        for key, (_, dest) in keys.items():
            flag = getattr(args, dest, None)
            if flag is not None:
                values[(section, key)] = _convert(section, key, flag)
    if values.get(("run", "threads")) is None and os.environ.get("NHQST_THREADS"):
        values[("run", "threads")] = _convert("run", "threads", os.environ["NHQST_THREADS"])
    cfg = RunConfig()
    for (section, key), val in values.items():
        getattr(cfg, section)[key] = val
    return cfg


def parse_axis(text: str) -> Axis:
    """``name:start:stop:steps``."""
    try:
        name, a, b, n = text.split(":")
        return Axis(name.strip(), float(a), float(b), int(n))
    except ValueError as exc:
        raise ConfigError(f"axis must look like name:start:stop:steps, got {text!r} ({exc})")


# ---------------------------------------------------------------------------
# manifest


class Manifest:
    def __init__(self, cfg: RunConfig, command: str, argv: list[str]):
        self.cfg = cfg
        self.data = {
            "tool": "nhqst",
            "version": __version__,
            "command": command,
            "argv": argv,
            "config": cfg.as_dict(),
            "config_hash": cfg.hash,
            "started": datetime.now(timezone.utc).isoformat(),
            "summary": {},
            "outputs": [],
        }

    def output(self, path):
        self.data["outputs"].append(str(path))
        return path

    def finish(self, status: str) -> Path:
        self.data["finished"] = datetime.now(timezone.utc).isoformat()
        self.data["status"] = status
        path = self.cfg.out_dir / "manifest.json"
        write_json(path, self.data)
        return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_spectrum(cfg: RunConfig, args, man: Manifest) -> dict:
    spec = cfg.model_spec()
    report = classify_model(spec)
    ev = report.eigenvalues
    out = cfg.out_dir
    man.output(write_csv(out / "eigenvalues.csv", ["re", "im"], zip(ev.real, ev.imag)))
    summary = {"model": spec.to_dict(), **report.to_dict()}
    man.output(write_json(out / "spectrum.json", summary))
    print(f"regime={report.regime} max|Im e|={report.max_abs_imag:.6g}")
    return summary


def cmd_fidelity(cfg: RunConfig, args, man: Manifest) -> dict:
    spec = cfg.model_spec()
    grid = cfg.time_grid()
    if spec.u1:
        curve = fidelity_curve(spec, grid)
    else:
        order = int(cfg.sweep["quadrature_order"])
        curve = haar_fidelity_curve(spec, grid, HaarQuadrature(order, order))
    m = transfer_metrics(curve)
    out = cfg.out_dir
    man.output(write_csv(out / "fidelity.csv", ["t", "F"], zip(curve.times, curve.F)))
    summary = {"model": spec.to_dict(), "grid": grid.to_dict(), **m.to_dict()}
    man.output(write_json(out / "metrics.json", summary))
    print(
        "t_min=%s first_max_t=%s first_max_F=%s"
        % tuple("-" if v is None else f"{v:.6g}" for v in (m.t_min, m.first_max_t, m.first_max_F))
    )
    return summary


def _sweep_axes(cfg: RunConfig, spec: ModelSpec):
    defaults = ("h:1:3:41", "gamma:0:1.2:25") if spec.kind == "ixy" else ("h1:0:1:101", "h2:0:0.5:51")
    a1 = parse_axis(cfg.sweep.get("axis1") or defaults[0])
    a2 = parse_axis(cfg.sweep.get("axis2") or defaults[1])
    for a in (a1, a2):
        if a.name not in spec.to_dict() or a.name in ("kind", "variant", "n_sites"):
            raise ConfigError(f"cannot sweep over {a.name!r}")
        if getattr(spec, a.name) is None:
            raise ConfigError(f"axis {a.name!r} does not apply to model {spec.kind}")
    return a1, a2


def cmd_sweep(cfg: RunConfig, args, man: Manifest) -> dict:
    spec = cfg.model_spec()
    grid = cfg.time_grid()
    a1, a2 = _sweep_axes(cfg, spec)
    out = cfg.out_dir
    store_path = out / "sweep.jsonl"
    if store_path.exists() and not args.resume:
        store_path.unlink()
    recs = sweep_plane(
        spec,
        a1,
        a2,
        grid,
        workers=cfg.threads,
        store=store_path,
        quadrature_order=int(cfg.sweep["quadrature_order"]),
    )
    man.output(store_path)
    header = [a1.name, a2.name, "regime", "first_max_F", "first_max_t", "t_min", "max_F", "error"]
    rows = [
        (r.value1, r.value2, r.regime, r.first_max_F, r.first_max_t, r.t_min, r.max_F, r.error)
        for r in recs
    ]
    man.output(write_csv(out / "sweep.csv", header, rows))
    v1, v2, M = records_matrix(recs, "first_max_F")
    # rows of the gnuplot matrix follow axis1, columns axis2
    man.output(write_gnuplot_matrix(out / "first_max_F.dat", v2, v1, M))
    R = np.full_like(M, np.nan)
    idx1 = {v: i for i, v in enumerate(v1)}
    idx2 = {v: j for j, v in enumerate(v2)}
    for r in recs:
        if r.regime is not None:
            R[idx1[r.value1], idx2[r.value2]] = float(r.regime == BROKEN)
    man.output(write_gnuplot_matrix(out / "regime.dat", v2, v1, R))
    gains = [r.first_max_F for r in recs if r.first_max_F is not None]
    summary = {
        "points": len(recs),
        "gain_points": len(gains),
        "broken_points": sum(r.regime == BROKEN for r in recs),
        "errors": sum(r.error is not None for r in recs),
        "max_first_max_F": max(gains) if gains else None,
    }
    print(
        f"{summary['points']} points, max first-max fidelity "
        f"{'-' if not gains else f'{max(gains):.6f}'}"
    )
    return summary


def cmd_fit(cfg: RunConfig, args, man: Manifest) -> dict:
    out = cfg.out_dir
    src = Path(args.input) if args.input else out / "sweep.jsonl"
    recs = list(SweepStore(src).load().values())
    if not recs:
        raise ConfigError(f"no sweep records in {src}")
    regime = {"unbroken": UNBROKEN, "broken": BROKEN, "any": None}[args.regime]
    lo = args.min_value1
    hi = math.inf if args.max_value1 is None else args.max_value1

    def outside(r):
        return r.value1 <= lo or r.value1 > hi

    if args.method == "band":
        pts = extract_threshold_band(recs, args.band, regime=regime, exclude=outside)
    elif args.method == "drop":
        pts = extract_first_max_drop(recs, exclude=outside)
    else:
        pts = extract_no_gain_boundary(recs, regime=regime, exclude=outside)
    v1 = sorted({r.value1 for r in recs})
    v2 = sorted({r.value2 for r in recs})
    step = min(np.diff(v1).min(), np.diff(v2).min())
    link = args.link if args.link else 5 * step
    man.output(write_csv(out / "boundary.csv", [recs[0].axis1, recs[0].axis2], pts))
    fit = fit_conic_branch(pts, args.kind, link, min_points=args.min_points, anchor=args.anchor)
    summary = {
        "source": str(src),
        "method": args.method,
        "anchor": args.anchor,
        "boundary_points": len(pts),
        "link": link,
        **fit.to_dict(),
    }
    man.output(write_json(out / "conic.json", summary))
    print(f"{fit.kind}: a={fit.a:.4f} b={fit.b:.4f} residual={fit.residual:.3g} ({fit.n_points} pts)")
    return summary


def cmd_scaling(cfg: RunConfig, args, man: Manifest) -> dict:
    spec = cfg.model_spec()
    grid = cfg.time_grid()
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--sizes must be comma-separated integers: {exc}")
    bounds = ((args.bounds[0], args.bounds[1]), (args.bounds[2], args.bounds[3]))
    if sizes != sorted(sizes) or len(sizes) < 5:
        raise ConfigError("--sizes needs at least 5 ascending chain lengths")
    if spec.kind == "ssh" and any(n % 2 for n in sizes):
        raise ConfigError("SSH chain lengths must be even")
    if spec.kind == "ixy":
        raise ConfigError("scaling supports xx and ssh models")
    fit = scaling_fit(spec, sizes, bounds, grid, coarse=args.coarse, workers=cfg.threads)
    out = cfg.out_dir
    rows = [(o["n"], o["F_max"], o.get("h1"), o.get("h2"), o["gain"]) for o in fit.optima]
    man.output(write_csv(out / "scaling.csv", ["N", "F_max", "h1", "h2", "gain"], rows))
    summary = fit.to_dict()
    man.output(write_json(out / "scaling.json", summary))
    print(f"exponent={fit.exponent:.4f} prefactor={fit.prefactor:.4f} r2={fit.r2:.4f}")
    return summary


def cmd_entanglement(cfg: RunConfig, args, man: Manifest) -> dict:
    spec = cfg.model_spec()
    grid = cfg.time_grid()
    E = entanglement_trace(spec, args.theta, args.phi, grid)
    out = cfg.out_dir
    header = ["t", "E_total"] + [f"E_{k}_{spec.n_sites}" for k in range(1, spec.n_sites)]
    rows = (
        [t, e, *per] for t, e, per in zip(E.times, E.E_total, E.per_pair)
    )
    man.output(write_csv(out / "entanglement.csv", header, rows))
    summary = {"model": spec.to_dict(), "theta": args.theta, "phi": args.phi}
    if spec.u1:
        F = fidelity_curve(spec, grid)
        man.output(write_csv(out / "fidelity.csv", ["t", "F"], zip(F.times, F.F)))
        rep = peak_alignment(F, E, args.window)
        summary["alignment"] = rep.to_dict()
        print(
            f"aligned={rep.aligned} fidelity peaks={len(rep.distances)} "
            f"E peaks below threshold={rep.entanglement_peaks_below_threshold}"
        )
    man.output(write_json(out / "entanglement.json", summary))
    return summary


def cmd_trajectory(cfg: RunConfig, args, man: Manifest) -> dict:
    spec = cfg.model_spec()
    if spec.kind == "ixy":
        raise ConfigError("trajectory needs an xx or ssh model")
    dt = float(args.step if args.step is not None else 1e-3)
    psi0 = initial_state(spec.n_sites, args.theta, args.phi)
    steps = [dt, dt / 2] if args.halve else [dt]
    out = cfg.out_dir
    devs = []
    for i, d in enumerate(steps):
        res = trajectory_vs_nh(spec, psi0, args.T, d)
        devs.append(res.max_deviation)
        name = "trajectory.csv" if i == 0 else "trajectory_half.csv"
        rows = zip(res.times, res.deviations, res.survival_log_prob, res.nh_log_norm)
        man.output(write_csv(out / name, ["t", "deviation", "survival_log_prob", "nh_log_norm"], rows))
    summary = {"dt": steps, "max_deviation": devs, "T": args.T}
    if len(devs) == 2:
        summary["ratio"] = devs[0] / devs[1] if devs[1] > 0 else math.inf
    man.output(write_json(out / "trajectory.json", summary))
    print("max deviation " + " ".join(f"{d:.6g}" for d in devs) + (
        f" ratio {summary['ratio']:.4f}" if "ratio" in summary else ""
    ))
    return summary


COMMANDS = {
    "spectrum": cmd_spectrum,
    "fidelity": cmd_fidelity,
    "sweep": cmd_sweep,
    "fit": cmd_fit,
    "scaling": cmd_scaling,
    "entanglement": cmd_entanglement,
    "trajectory": cmd_trajectory,
}


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run")
    g.add_argument("--config", help="INI file with [model] [time] [sweep] [output] [run] sections")
    g.add_argument("--out", help="output directory")
    g.add_argument("--formats", help=argparse.SUPPRESS)
    g.add_argument("--threads", help="worker processes (env NHQST_THREADS)")
    g.add_argument("--seed")
    g.add_argument("-v", "--verbose", action="store_true")
    m = p.add_argument_group("model")
    m.add_argument("--model", choices=["xx", "ssh", "ixy"])
    m.add_argument("--n", help="number of sites")
    m.add_argument("--coupling")
    m.add_argument("--j2", help="SSH inter/intra-cell coupling ratio")
    m.add_argument("--h1")
    m.add_argument("--h2")
    m.add_argument("--h")
    m.add_argument("--gamma")
    m.add_argument("--variant", choices=["nh", "hermitian"])
    m.add_argument("--field-sign", dest="field_sign")
    m.add_argument("--stagger-sign", dest="stagger_sign")
    t = p.add_argument_group("time")
    t.add_argument("--t-max", dest="t_max")
    t.add_argument("--dt")
    s = p.add_argument_group("sweep")
    s.add_argument("--axis1", help="name:start:stop:steps (outer axis)")
    s.add_argument("--axis2", help="name:start:stop:steps (inner axis)")
    s.add_argument("--quadrature-order", dest="quadrature_order")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nhqst", description="Quantum state transfer through non-Hermitian spin chains")
    parser.add_argument("--version", action="version", version=f"nhqst {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()

    sub.add_parser("spectrum", parents=[common], help="eigenvalues and regime")
    sub.add_parser("fidelity", parents=[common], help="F(t) and transfer metrics")
    p = sub.add_parser("sweep", parents=[common], help="first-maximum fidelity over a parameter plane")
    p.add_argument("--resume", action="store_true", help="reuse records already in sweep.jsonl")

    p = sub.add_parser("fit", parents=[common], help="fit the no-gain boundary of a sweep")
    p.add_argument("--input", help="sweep JSON-lines file (default: <out>/sweep.jsonl)")
    p.add_argument("--kind", choices=["ellipse", "hyperbola"], required=True)
    p.add_argument("--regime", choices=["unbroken", "broken", "any"], default="unbroken")
    p.add_argument("--min-value1", dest="min_value1", type=float, default=0.0,
                   help="drop points whose first axis is <= this (default 0)")
    p.add_argument("--link", type=float, help="cluster linking distance (default 5 lattice steps)")
    p.add_argument("--max-value1", dest="max_value1", type=float,
                   help="drop points whose first axis is > this")
    p.add_argument("--method", choices=["crossing", "band", "drop"], default="crossing",
                   help="crossing: interpolated gain/no-gain edge; band: gain points with "
                        "F1 - 2/3 <= --band; drop: where the earliest peak above 2/3 sinks to 2/3")
    p.add_argument("--band", type=float, default=0.005)
    p.add_argument("--anchor", choices=["origin", "axis", "residual"], default="origin",
                   help="branch choice: innermost cluster, cluster meeting the second axis at 0, "
                        "or best-fitting cluster")
    p.add_argument("--min-points", dest="min_points", type=int, default=8,
                   help="smallest cluster considered for the fit")

    p = sub.add_parser("scaling", parents=[common], help="F_max versus chain length")
    p.add_argument("--sizes", default="8,12,16,24,32,48,64")
    p.add_argument("--coarse", type=int, default=21)
    p.add_argument("--bounds", type=float, nargs=4, default=[0.0, 1.0, 0.0, 1.0],
                   metavar=("LO1", "HI1", "LO2", "HI2"))

    p = sub.add_parser("entanglement", parents=[common], help="E(t) and peak alignment with F(t)")
    p.add_argument("--theta", type=float, default=math.pi / 2)
    p.add_argument("--phi", type=float, default=0.0)
    p.add_argument("--window", type=float, default=1.0)

    p = sub.add_parser("trajectory", parents=[common], help="no-click trajectory vs nH evolution")
    p.add_argument("--T", type=float, default=5.0, help="total time")
    p.add_argument("--step", type=float, help="trajectory step (default 1e-3; also --dt)")
    p.add_argument("--halve", action="store_true", help="repeat with half the step")
    p.add_argument("--theta", type=float, default=math.pi / 2)
    p.add_argument("--phi", type=float, default=0.0)
    return parser


def _fail(man: Manifest | None, exc: Exception) -> None:
    if man is None:
        return
    man.data["error"] = f"{type(exc).__name__}: {exc}"
    try:
        man.finish("failed")
    except OSError:
        pass


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "trajectory" and args.step is None and args.dt is not None:
        args.step, args.dt = float(args.dt), None
    man = None
    try:
        cfg = build_config(args)
        cfg.time_grid()  # validate before any work
        man = Manifest(cfg, args.command, argv)
        t0 = time.perf_counter()
        summary = COMMANDS[args.command](cfg, args, man)
        man.data["summary"] = summary
        man.data["elapsed_s"] = time.perf_counter() - t0
        man.finish("ok")
    except ConfigError as exc:
        print(f"nhqst: configuration error: {exc}", file=sys.stderr)
        _fail(man, exc)
        return EXIT_CONFIG
    except (LinalgError, NoSignChangeError, ArithmeticError, ValueError) as exc:
        print(f"nhqst: numerical failure: {exc}", file=sys.stderr)
        _fail(man, exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Haar-averaged transfer fidelity and threshold metrics.

For U(1) chains the Haar average over input states has a closed form in the
receiver amplitude b_B and the sector norm Gamma:

    F = 1/2 + (x - 2y + Gamma x)/(Gamma-1)^2
            + ((1+Gamma) y - 2 Gamma x) log(Gamma)/(Gamma-1)^3,

with x = Re b_B and y = |b_B|^2. Three evaluation branches keep it accurate:
a power series in u = Gamma - 1 near the Hermitian point, the formula itself
in extended precision for moderate Gamma, and a rescaled form in 1/Gamma for
large Gamma (broken regime), which never materializes Gamma itself.

Models without U(1) symmetry use a numerical Haar average instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .dynamics import EIG_PATH_MAX_CONDITION, TimeGrid, amplitudes, sector_trace
from .linalg import LinalgError, eig_general, expm
from .models import ModelSpec, build_full_hamiltonian, build_sector_hamiltonian

CLASSICAL_THRESHOLD = 2.0 / 3.0
SERIES_RADIUS = 1e-4
REFINE_DT = 5e-3


class QuadratureConvergenceError(LinalgError):
    def __init__(self, coarse: float, fine: float):
        super().__init__(
            f"Haar quadrature not converged: {coarse:.10f} vs {fine:.10f} after doubling"
        )
        self.coarse, self.fine = coarse, fine


# ---------------------------------------------------------------------------
# closed form


def _series(x, y, u):
    # sum_n (-u)^n [2x + (n+1) y] / ((n+2)(n+3)), truncated after n = 3
    out = np.zeros(np.broadcast(x, y, u).shape)
    p = np.ones_like(out)
    for n in range(4):
        out = out + p * (2 * x + (n + 1) * y) / ((n + 2) * (n + 3))
        p = p * (-u)
    return 0.5 + out


def _direct(x, y, lg=None, u=None):
    """The closed form in extended precision.

    Give either ``lg`` = log(Gamma) or ``u`` = Gamma - 1; the other one is
    derived in extended precision so that both agree to working accuracy,
    otherwise the (Gamma-1)^-3 factor amplifies their mismatch.
    """
    ld = np.longdouble
    x, y = np.asarray(x, dtype=ld), np.asarray(y, dtype=ld)
    if lg is not None:
        lg = np.asarray(lg, dtype=ld)
        u = np.expm1(lg)
    else:
        u = np.asarray(u, dtype=ld)
        lg = np.log1p(u)
    g = 1 + u
    f = ld(0.5) + (x - 2 * y + g * x) / u**2 + ((1 + g) * y - 2 * g * x) * lg / u**3
    return f.astype(float)


def _rescaled(re_beta, abs2_beta, lg):
    r = np.exp(-lg)
    rh = np.exp(-0.5 * lg)
    om = -np.expm1(-lg)  # 1 - r
    t1 = (re_beta * (r * rh + rh) - 2 * r * abs2_beta) / om**2
    t2 = ((r + r * r) * abs2_beta - 2 * r * rh * re_beta) * lg / om**3
    return 0.5 + t1 + t2


def fidelity_normalized(beta_b, log_gamma):
    """Closed-form fidelity from beta_B = b_B/sqrt(Gamma) and log(Gamma)."""
    beta_b = np.asarray(beta_b, dtype=np.complex128)
    lg = np.asarray(log_gamma, dtype=float)
    beta_b, lg = np.broadcast_arrays(beta_b, lg)
    re_b, a2 = beta_b.real, np.abs(beta_b) ** 2
    out = np.empty(lg.shape)
    with np.errstate(over="ignore"):
        u = np.expm1(lg)
    near = np.abs(u) < SERIES_RADIUS
    big = lg > 1.0
    mid = ~(near | big)
    if near.any():
        s = np.exp(0.5 * lg[near])
        out[near] = _series(re_b[near] * s, a2[near] * s * s, u[near])
    if mid.any():
        s = np.exp(0.5 * lg[mid])
        out[mid] = _direct(re_b[mid] * s, a2[mid] * s * s, lg=lg[mid])
    if big.any():
        out[big] = _rescaled(re_b[big], a2[big], lg[big])
    return out if out.ndim else float(out)


def average_fidelity_u1(b_B, gamma_norm):
    """Haar-averaged fidelity of a U(1) chain from b_B and Gamma = sum_k |b_k|^2."""
    b = np.asarray(b_B, dtype=np.complex128)
    g = np.asarray(gamma_norm, dtype=float)
    if np.any(~(g > 0)):
        raise ValueError("Gamma must be positive")
    if np.any(np.abs(b) ** 2 > g * (1 + 1e-9) + 1e-15):
        raise ValueError("|b_B|^2 cannot exceed Gamma")
    return fidelity_normalized(b / np.sqrt(g), np.log(g))


def fidelity_direct_formula(b_B, gamma_norm):
    """The closed form evaluated as written (extended precision), no branching."""
    b = np.asarray(b_B, dtype=np.complex128)
    g = np.asarray(gamma_norm, dtype=float)
    return _direct(b.real, np.abs(b) ** 2, u=g - 1.0)


def fidelity_series(b_B, gamma_norm):
    """Third-order expansion of the closed form around Gamma = 1."""
    b = np.asarray(b_B, dtype=np.complex128)
    return _series(b.real, np.abs(b) ** 2, np.asarray(gamma_norm, dtype=float) - 1.0)


# ---------------------------------------------------------------------------
# curves and metrics


@dataclass(frozen=True)
class FidelityCurve:
    times: np.ndarray
    F: np.ndarray
    # maps an array of times to fidelities; used for sub-grid refinement
    evaluator: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, repr=False, compare=False
    )
    horizon: float | None = None  # searched horizon if the curve was cut early

    def __post_init__(self):
        if len(self.times) != len(self.F):
            raise ValueError("times and F differ in length")
        if len(self.times) == 0:
            raise ValueError("empty curve")


@dataclass(frozen=True)
class TransferMetrics:
    searched_horizon: float
    t_min: float | None = None
    first_max_t: float | None = None
    first_max_F: float | None = None
    classical_threshold: float = CLASSICAL_THRESHOLD

    @property
    def gain(self) -> bool:
        return self.first_max_F is not None

    def to_dict(self) -> dict:
        return {
            "classical_threshold": self.classical_threshold,
            "t_min": self.t_min,
            "first_max_t": self.first_max_t,
            "first_max_F": self.first_max_F,
            "searched_horizon": self.searched_horizon,
        }


def first_local_max(F: np.ndarray, threshold: float = CLASSICAL_THRESHOLD) -> int | None:
    """Index of the earliest interior local maximum with F > threshold."""
    F = np.asarray(F)
    if len(F) < 3:
        return None
    inner = F[1:-1]
    ok = (inner > threshold) & (inner > F[:-2]) & (inner >= F[2:])
    hits = np.flatnonzero(ok)
    return int(hits[0]) + 1 if len(hits) else None


def _parabola_vertex(t, f):
    (t0, t1, t2), (f0, f1, f2) = t, f
    den = (t0 - t1) * (t0 - t2) * (t1 - t2)
    a = (t2 * (f1 - f0) + t1 * (f0 - f2) + t0 * (f2 - f1)) / den
    b = (t2 * t2 * (f0 - f1) + t1 * t1 * (f2 - f0) + t0 * t0 * (f1 - f2)) / den
    if a >= 0:
        return t1, f1
    tv = -b / (2 * a)
    if not t0 <= tv <= t2:
        return t1, f1
    c = f1 - a * t1 * t1 - b * t1
    return tv, a * tv * tv + b * tv + c


def _refine_max(curve: FidelityCurve, i: int, refine: int):
    t, F = curve.times, curve.F
    lo, hi = t[i - 1], t[i + 1]
    if curve.evaluator is not None:
        n = max(refine, math.ceil((hi - lo) / REFINE_DT))
        tf = np.linspace(lo, hi, n + 1)
        try:
            ff = np.asarray(curve.evaluator(tf), dtype=float)
        except LinalgError:
            ff = None
        if ff is not None and np.all(np.isfinite(ff)):
            j = int(np.clip(np.argmax(ff), 1, n - 1))
            tv, fv = _parabola_vertex(tf[j - 1 : j + 2], ff[j - 1 : j + 2])
            if fv >= ff[j]:
                return float(tv), float(fv)
            return float(tf[j]), float(ff[j])
    tv, fv = _parabola_vertex(t[i - 1 : i + 2], F[i - 1 : i + 2])
    return float(tv), float(max(fv, F[i]))


def transfer_metrics(
    curve: FidelityCurve, threshold: float = CLASSICAL_THRESHOLD, refine: int = 10
) -> TransferMetrics:
    """Earliest threshold crossing and first local maximum above threshold."""
    t, F = np.asarray(curve.times), np.asarray(curve.F)
    horizon = float(curve.horizon if curve.horizon is not None else t[-1])
    above = np.flatnonzero(F > threshold)
    t_min = None
    if len(above):
        k = int(above[0])
        if k == 0:
            t_min = float(t[0])
        else:
            t0, t1, f0, f1 = t[k - 1], t[k], F[k - 1], F[k]
            t_min = float(t0 + (threshold - f0) * (t1 - t0) / (f1 - f0))
            if curve.evaluator is not None:
                g = lambda s: float(curve.evaluator(np.array([s]))[0]) - threshold
                try:
                    if g(t0) <= 0 < g(t1):
                        t_min = float(brentq(g, t0, t1, xtol=1e-6))
                except (LinalgError, ValueError):
                    pass
    i = first_local_max(F, threshold)
    if i is None:
        return TransferMetrics(horizon, t_min, None, None, threshold)
    tm, fm = _refine_max(curve, i, refine)
    if t_min is not None:
        tm = max(tm, t_min)
    return TransferMetrics(horizon, t_min, tm, fm, threshold)


def sector_fidelity_evaluator(M: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    M = np.array(M, dtype=np.complex128)

    def evaluate(times):
        tr = sector_trace(M, np.atleast_1d(np.asarray(times, dtype=float)))
        return fidelity_normalized(tr.beta_receiver, tr.log_gamma)

    return evaluate


def fidelity_curve_from_matrix(M, times) -> FidelityCurve:
    tr = sector_trace(M, times)
    F = fidelity_normalized(tr.beta_receiver, tr.log_gamma)
    return FidelityCurve(tr.times, F, sector_fidelity_evaluator(M))


def fidelity_curve(spec: ModelSpec, grid: TimeGrid) -> FidelityCurve:
    """F(t) for a U(1) chain via the closed form; numeric Haar average otherwise."""
    if not spec.u1:
        return haar_fidelity_curve(spec, grid)
    tr = amplitudes(spec, grid)
    F = fidelity_normalized(tr.beta_receiver, tr.log_gamma)
    return FidelityCurve(tr.times, F, sector_fidelity_evaluator(build_sector_hamiltonian(spec)))


# ---------------------------------------------------------------------------
# numerical Haar average
#
# The unnormalized evolved state is linear in the input amplitudes, so
# U|Psi(theta, phi)> = cos(theta/2) U|0..0> + e^{i phi} sin(theta/2) U|1 0..0>.
# Evolving these two vectors (with one shared renormalization, which preserves
# their ratio) gives the exact per-node normalized state at every quadrature
# node from 2x2 blocks of receiver-site data.


@dataclass(frozen=True)
class HaarQuadrature:
    order_theta: int = 32
    order_phi: int = 32

    def nodes(self):
        x, w = np.polynomial.legendre.leggauss(self.order_theta)
        phi = 2 * np.pi * np.arange(self.order_phi) / self.order_phi
        c = np.sqrt((1 + x) / 2)  # cos(theta/2)
        s = np.sqrt((1 - x) / 2)
        C = np.empty((self.order_theta, self.order_phi, 2), dtype=np.complex128)
        C[..., 0] = c[:, None]
        C[..., 1] = s[:, None] * np.exp(1j * phi)[None, :]
        wts = np.repeat(w / 2, self.order_phi) / self.order_phi
        return C.reshape(-1, 2), wts

    def kernels(self):
        """Contraction tensors for numerator and norm, shape (nodes, 16)."""
        C, wts = self.nodes()
        W = np.einsum("na,nb->nab", C, C.conj())
        Kn = np.einsum("nab,nj,nk->nabjk", W, C.conj(), C).reshape(len(C), 16)
        Kd = np.einsum("nab,jk->nabjk", W, np.eye(2)).reshape(len(C), 16)
        return Kn, Kd, wts

    def doubled(self) -> "HaarQuadrature":
        return HaarQuadrature(2 * self.order_theta, 2 * self.order_phi)


def _receiver_blocks(pair: np.ndarray) -> np.ndarray:
    """R[a, b, j, k] = sum_r V_a[r, j] conj(V_b[r, k]), flattened to (..., 16).

    ``pair`` has shape (..., 2^N, 2): column a holds U|input a>.
    """
    dim = pair.shape[-2]
    A = pair.reshape(pair.shape[:-2] + (dim // 2, 2, 2))  # (..., r, j, a)
    R = np.einsum("...rja,...rkb->...abjk", A, A.conj())
    return R.reshape(R.shape[:-4] + (16,))


def _haar_from_blocks(R: np.ndarray, quad: HaarQuadrature) -> np.ndarray:
    Kn, Kd, wts = quad.kernels()
    num = (R @ Kn.T).real
    den = (R @ Kd.T).real
    return (num / den) @ wts


def _input_pair(n: int) -> np.ndarray:
    V = np.zeros((2**n, 2), dtype=np.complex128)
    V[0, 0] = 1.0
    V[1 << (n - 1), 1] = 1.0
    return V


def _evolve_pair(H: np.ndarray, times: np.ndarray, max_step: float = 1.0) -> np.ndarray:
    """Normalized pair U(t)[|0..0>, |1 0..0>] at arbitrary non-negative times.

    Propagates in pieces of at most ``max_step`` so broken-regime growth never
    overflows a single matrix exponential.
    """
    times = np.asarray(times, dtype=float)
    n = int(round(math.log2(H.shape[0])))
    out = np.empty((len(times), H.shape[0], 2), dtype=np.complex128)
    U_big = expm(-1j * H * max_step)
    V, t_prev = _input_pair(n), 0.0
    for idx in np.argsort(times, kind="stable"):
        t = times[idx]
        while t - t_prev > max_step:
            V = U_big @ V
            V = V / np.linalg.norm(V)
            t_prev += max_step
        if t > t_prev:
            V = expm(-1j * H * (t - t_prev)) @ V
            V = V / np.linalg.norm(V)
            t_prev = t
        out[idx] = V
    return out


def haar_fidelity_numeric(
    spec: ModelSpec, t: float, quadrature_order: int = 32, check: bool = True
) -> float:
    """Haar average of <psi|rho_N(t)|psi> by Gauss-Legendre x trapezoid quadrature.

    With ``check`` the node count is doubled and a change above 1e-6 raises
    QuadratureConvergenceError carrying both values.
    """
    if spec.n_sites > 10:
        raise ValueError("full-space evolution limited to N <= 10")
    if t < 0:
        raise ValueError("t must be non-negative")
    H = build_full_hamiltonian(spec)
    R = _receiver_blocks(_evolve_pair(H, np.array([t]))[0])
    quad = HaarQuadrature(quadrature_order, quadrature_order)
    val = float(_haar_from_blocks(R, quad))
    if check:
        fine = float(_haar_from_blocks(R, quad.doubled()))
        if abs(fine - val) > 1e-6:
            raise QuadratureConvergenceError(val, fine)
    return val


class _ShortPropagator:
    """V -> normalized exp(-iHs) V for 0 <= s <= dt, reusing one factorization."""

    def __init__(self, H: np.ndarray):
        self.H = H
        dec = eig_general(H)
        self.eig = None
        if dec.condition <= EIG_PATH_MAX_CONDITION:
            self.eig = (dec.eigenvalues, dec.vectors, np.linalg.inv(dec.vectors))

    def __call__(self, V: np.ndarray, s: float) -> np.ndarray:
        if s == 0:
            return V
        if self.eig is not None:
            w, P, Pinv = self.eig
            phase = -1j * w * s
            out = P @ (np.exp(phase - phase.real.max())[:, None] * (Pinv @ V))
        else:
            out = expm(-1j * self.H * s) @ V
        return out / np.linalg.norm(out)


def haar_fidelity_curve(
    spec: ModelSpec,
    grid: TimeGrid,
    quadrature: HaarQuadrature | None = None,
    stop_after_first_max: bool = False,
    chunk: int = 200,
) -> FidelityCurve:
    """Numerically Haar-averaged F(t) on the grid via normalized stepping.

    With ``stop_after_first_max`` the evolution halts once the first local
    maximum above 2/3 is bracketed; the curve then ends early but keeps the
    full horizon in ``horizon``. The attached evaluator restarts from the
    nearest stored grid state, so sub-grid refinement is cheap.
    """
    if spec.n_sites > 10:
        raise ValueError("full-space evolution limited to N <= 10")
    quad = quadrature or HaarQuadrature(16, 16)
    Kn, Kd, wts = quad.kernels()
    H = build_full_hamiltonian(spec)
    times = grid.times
    U = expm(-1j * H * grid.dt)
    V = _input_pair(spec.n_sites)
    F = np.empty(len(times))
    states = np.empty((len(times),) + V.shape, dtype=np.complex128)
    filled = 0
    while filled < len(times):
        m = min(chunk, len(times) - filled)
        block = states[filled : filled + m]
        for j in range(m):
            if filled + j > 0:
                V = U @ V
                V = V / np.linalg.norm(V)
            block[j] = V
        R = _receiver_blocks(block)
        F[filled : filled + m] = ((R @ Kn.T).real / (R @ Kd.T).real) @ wts
        filled += m
        if stop_after_first_max and filled < len(times):
            i = first_local_max(F[:filled])
            if i is not None:
                break
    states = states[:filled]
    short = None

    def evaluate(ts):
        nonlocal short
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if np.any(ts < 0):
            raise ValueError("times must be non-negative")
        inside = ts <= times[filled - 1]
        out = np.empty((len(ts),) + states.shape[1:], dtype=np.complex128)
        if inside.any():
            short = short or _ShortPropagator(H)
            k = np.clip(np.floor(ts[inside] / grid.dt + 1e-9).astype(int), 0, filled - 1)
            out[inside] = [short(states[j], t - times[j]) for j, t in zip(k, ts[inside])]
        if (~inside).any():
            out[~inside] = _evolve_pair(H, ts[~inside])
        R = _receiver_blocks(out)
        return ((R @ Kn.T).real / (R @ Kd.T).real) @ wts

    return FidelityCurve(times[:filled], F[:filled], evaluate, horizon=grid.t_max)

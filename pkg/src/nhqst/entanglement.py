"""Pairwise entanglement between each site and the receiver, and its alignment
with fidelity peaks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import TimeGrid, amplitudes, evolve_full_normalized, initial_state
from .transfer import CLASSICAL_THRESHOLD, FidelityCurve

PPT_TOLERANCE = 1e-10


@dataclass(frozen=True)
class PairState:
    rho: np.ndarray  # 4x4, basis |00>,|01>,|10>,|11> as (site k, site N)
    source: str = "sector"

    def __post_init__(self):
        r = self.rho
        if r.shape[-2:] != (4, 4):
            raise ValueError("pair state must be 4x4")


@dataclass(frozen=True)
class EntanglementTrace:
    times: np.ndarray
    E_total: np.ndarray
    per_pair: np.ndarray | None = None  # (T, N-1), column k-1 is site k with N


def _normalize_sector(c0, c):
    c0 = np.asarray(c0, dtype=np.complex128)
    c = np.asarray(c, dtype=np.complex128)
    tot = np.abs(c0) ** 2 + np.sum(np.abs(c) ** 2, axis=-1)
    return tot


def _assemble(c0, c, k: int) -> np.ndarray:
    """Batched closed form; c0 shape (...), c shape (..., N); k is 1-based."""
    N = c.shape[-1]
    ck, cN = c[..., k - 1], c[..., N - 1]
    rest = np.sum(np.abs(c) ** 2, axis=-1) - np.abs(ck) ** 2 - np.abs(cN) ** 2
    rho = np.zeros(c.shape[:-1] + (4, 4), dtype=np.complex128)
    rho[..., 0, 0] = np.abs(c0) ** 2 + rest
    rho[..., 1, 1] = np.abs(cN) ** 2
    rho[..., 2, 2] = np.abs(ck) ** 2
    rho[..., 0, 1] = c0 * cN.conj()
    rho[..., 0, 2] = c0 * ck.conj()
    rho[..., 2, 1] = ck * cN.conj()
    rho[..., 1, 0] = rho[..., 0, 1].conj()
    rho[..., 2, 0] = rho[..., 0, 2].conj()
    rho[..., 1, 2] = rho[..., 2, 1].conj()
    return rho


def reduced_pair_state(c0: complex, c, k: int) -> PairState:
    """Two-site state of sites (k, N) for c0|vac> + sum_j c_j |j>."""
    c = np.asarray(c, dtype=np.complex128)
    N = len(c)
    if not 1 <= k < N:
        raise ValueError(f"need 1 <= k < N, got k={k}, N={N}")
    norm = _normalize_sector(c0, c)
    if abs(norm - 1) > 1e-10:
        raise ValueError(f"amplitudes not normalized: sum |c|^2 = {norm:.12g}")
    return PairState(_assemble(np.complex128(c0), c, k), "sector")


def partial_trace_pair(psi: np.ndarray, n: int, k1: int, k2: int) -> np.ndarray:
    """Reduced state of sites (k1, k2), k1 < k2, from full states of shape (..., 2^n)."""
    if not 1 <= k1 < k2 <= n:
        raise ValueError("need 1 <= k1 < k2 <= n")
    lead = psi.shape[:-1]
    shape = lead + (2 ** (k1 - 1), 2, 2 ** (k2 - k1 - 1), 2, 2 ** (n - k2))
    A = psi.reshape(shape)
    rho = np.einsum("...aibjc,...akblc->...ijkl", A, A.conj())
    return rho.reshape(lead + (4, 4))


def _log_negativity_batch(rho: np.ndarray) -> np.ndarray:
    r = rho.reshape(rho.shape[:-2] + (2, 2, 2, 2))
    pt = np.swapaxes(r, -4, -2).reshape(rho.shape)  # transpose the first qubit
    pt = 0.5 * (pt + np.conj(np.swapaxes(pt, -1, -2)))
    lam = np.linalg.eigvalsh(pt)
    neg = np.where(lam < -PPT_TOLERANCE, -lam, 0.0).sum(axis=-1)
    return np.log2(2 * neg + 1)


def log_negativity(rho) -> float:
    """log2(2N + 1) with N the absolute sum of negative partial-transpose eigenvalues."""
    m = rho.rho if isinstance(rho, PairState) else np.asarray(rho)
    return float(_log_negativity_batch(np.asarray(m, dtype=np.complex128)))


def _sector_state(spec, theta, phi, grid):
    tr = amplitudes(spec, grid)
    lg = tr.log_gamma
    ct, st = np.cos(theta / 2), np.sin(theta / 2)
    # normalized: (ct e^{-L/2}|vac> + e^{i phi} st beta) / sqrt(ct^2 e^{-L} + st^2)
    with np.errstate(over="ignore"):
        w = np.exp(-0.5 * lg)
    den = np.sqrt(ct**2 * w**2 + st**2)
    c0 = ct * w / den
    c = (np.exp(1j * phi) * st / den)[:, None] * tr.beta
    return c0.astype(np.complex128), c


def entanglement_trace(
    spec, theta: float = np.pi / 2, phi: float = 0.0, grid: TimeGrid | None = None
) -> EntanglementTrace:
    """E(t) = sum_{k<N} log-negativity of the (k, N) pair for the given input."""
    grid = grid or TimeGrid()
    N = spec.n_sites
    if spec.u1:
        c0, c = _sector_state(spec, theta, phi, grid)
        per = np.stack([_log_negativity_batch(_assemble(c0, c, k)) for k in range(1, N)], axis=1)
    else:
        psi = evolve_full_normalized(spec, initial_state(N, theta, phi), grid)
        per = np.stack(
            [_log_negativity_batch(partial_trace_pair(psi, N, k, N)) for k in range(1, N)], axis=1
        )
    return EntanglementTrace(grid.times, per.sum(axis=1), per)


def local_maxima(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    if len(y) < 3:
        return np.array([], dtype=int)
    inner = y[1:-1]
    return np.flatnonzero((inner > y[:-2]) & (inner >= y[2:])) + 1


@dataclass(frozen=True)
class AlignmentReport:
    fidelity_peak_times: np.ndarray
    distances: np.ndarray  # to the nearest entanglement peak, per fidelity peak
    entanglement_peak_times: np.ndarray
    entanglement_peaks_below_threshold: int  # E peaks where F < threshold
    window: float
    aligned: bool

    def to_dict(self) -> dict:
        return {
            "fidelity_peak_times": self.fidelity_peak_times.tolist(),
            "distances": self.distances.tolist(),
            "entanglement_peaks": int(len(self.entanglement_peak_times)),
            "entanglement_peaks_below_threshold": self.entanglement_peaks_below_threshold,
            "window": self.window,
            "aligned": self.aligned,
        }


def peak_alignment(
    F: FidelityCurve,
    E: EntanglementTrace,
    window: float = 1.0,
    threshold: float = CLASSICAL_THRESHOLD,
) -> AlignmentReport:
    """Distance from each fidelity peak above threshold to the nearest E peak."""
    tF, tE = np.asarray(F.times), np.asarray(E.times)
    if tF.shape != tE.shape or not np.allclose(tF, tE):
        raise ValueError("fidelity and entanglement must share a time grid")
    fp = local_maxima(F.F)
    fp = fp[F.F[fp] > threshold]
    ep = local_maxima(E.E_total)
    t_ep = tE[ep]
    if len(fp) and len(ep):
        dist = np.min(np.abs(tF[fp][:, None] - t_ep[None, :]), axis=1)
    else:
        dist = np.full(len(fp), np.inf)
    below = int(np.sum(F.F[ep] < threshold))
    aligned = bool(np.all(dist <= window))
    return AlignmentReport(tF[fp], dist, t_ep, below, float(window), aligned)

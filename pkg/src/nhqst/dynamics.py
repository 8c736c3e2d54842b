"""Time propagation in the single-excitation sector and in the full space.

Non-Hermitian evolution in the broken regime grows like exp(|Im e| t), which
overflows doubles well before t = 200 at strong fields. Sector amplitudes are
therefore stored as a unit vector ``beta`` together with ``log_gamma``, the
log of the squared norm Gamma = sum_k |b_k|^2, so that b = beta * sqrt(Gamma).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import LinalgError, eig_general, expm
from .models import ModelSpec, build_full_hamiltonian, build_sector_hamiltonian

# above this eigenvector condition number the eigenbasis path loses too many
# digits and propagation falls back to renormalized expm stepping
EIG_PATH_MAX_CONDITION = 1e6


class NormCollapseError(LinalgError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    t_max: float = 200.0
    dt: float = 0.05
    refine: int = 10  # subdivision factor used when refining peaks

    def __post_init__(self):
        if not (np.isfinite(self.t_max) and np.isfinite(self.dt)):
            raise ValueError("t_max and dt must be finite")
        if not 0 < self.dt <= self.t_max:
            raise ValueError(f"need 0 < dt <= t_max, got dt={self.dt}, t_max={self.t_max}")
        if int(self.refine) < 2:
            raise ValueError("refine must be >= 2")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def to_dict(self) -> dict:
        return {"t_max": self.t_max, "dt": self.dt, "refine": self.refine}


@dataclass(frozen=True)
class AmplitudeTrace:
    times: np.ndarray
    beta: np.ndarray  # (T, N) amplitudes divided by sqrt(Gamma)
    log_gamma: np.ndarray  # (T,)

    @property
    def gamma(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_gamma)

    @property
    def b(self) -> np.ndarray:
        """Unnormalized amplitudes b_k(t); may overflow to inf deep in the broken regime."""
        with np.errstate(over="ignore", invalid="ignore"):
            return self.beta * np.exp(0.5 * self.log_gamma)[:, None]

    @property
    def beta_receiver(self) -> np.ndarray:
        return self.beta[:, -1]


def propagator(H, t: float) -> np.ndarray:
    """exp(-iHt), through the eigenbasis when it is well conditioned."""
    if t < 0:
        raise ValueError("t must be non-negative")
    H = np.asarray(H, dtype=np.complex128)
    dec = eig_general(H)
    if dec.condition <= EIG_PATH_MAX_CONDITION:
        P = dec.vectors
        return (P * np.exp(-1j * dec.eigenvalues * t)[None, :]) @ np.linalg.inv(P)
    return expm(-1j * H * t)


def _eig_path(M: np.ndarray, v0: np.ndarray, times: np.ndarray, dec):
    P, w = dec.vectors, dec.eigenvalues
    c = np.linalg.solve(P, v0)
    phase = -1j * np.outer(times, w)  # (T, N)
    # factor out the fastest growth so nothing overflows
    shift = phase.real.max(axis=1)
    V = (np.exp(phase - shift[:, None]) * c[None, :]) @ P.T
    nrm2 = np.sum(np.abs(V) ** 2, axis=1)
    return V / np.sqrt(nrm2)[:, None], 2.0 * shift + np.log(nrm2)


def _step_path(M: np.ndarray, v0: np.ndarray, times: np.ndarray):
    out = np.empty((len(times), len(v0)), dtype=np.complex128)
    logs = np.empty(len(times))
    v = v0.astype(np.complex128)
    acc = np.log(np.vdot(v, v).real)
    t_prev, cache = times[0], {}
    if times[0] != 0:
        v = expm(-1j * M * times[0]) @ v
    for i, t in enumerate(times):
        step = t - t_prev
        if step > 0:
            key = round(step, 15)
            if key not in cache:
                cache[key] = expm(-1j * M * step)
            v = cache[key] @ v
        nrm2 = np.vdot(v, v).real
        if not nrm2 > 1e-300:
            raise NormCollapseError("state norm collapsed; use a smaller step")
        acc += np.log(nrm2)
        v = v / np.sqrt(nrm2)
        out[i], logs[i], t_prev = v, acc, t
    return out, logs


def sector_trace(M, times, v0=None) -> AmplitudeTrace:
    """Evolve ``v0`` (default |1>) under the sector matrix ``M`` at ``times``."""
    M = np.asarray(M, dtype=np.complex128)
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be non-negative")
    if v0 is None:
        v0 = np.zeros(M.shape[0], dtype=np.complex128)
        v0[0] = 1.0
    dec = eig_general(M)
    if dec.condition <= EIG_PATH_MAX_CONDITION:
        beta, lg = _eig_path(M, np.asarray(v0, dtype=np.complex128), times, dec)
    else:
        beta, lg = _step_path(M, np.asarray(v0, dtype=np.complex128), times)
    return AmplitudeTrace(times, beta, lg)


def amplitudes(spec: ModelSpec, grid: TimeGrid) -> AmplitudeTrace:
    """b_k(t) = <k|exp(-iMt)|1> on the grid, for XX and SSH chains."""
    return sector_trace(build_sector_hamiltonian(spec), grid.times)


def evolve_normalized(H, psi0, times, return_log_norm: bool = False):
    """Stepwise exp(-iH dt) with renormalization after every step.

    ``times`` must start at 0 and be evenly spaced.
    """
    H = np.asarray(H, dtype=np.complex128)
    times = np.asarray(times, dtype=float)
    psi = np.asarray(psi0, dtype=np.complex128)
    if psi.ndim != 1 or psi.shape[0] != H.shape[0]:
        raise ValueError("initial state must be a vector matching H")
    if abs(np.linalg.norm(psi) - 1) > 1e-10:
        raise ValueError("initial state must be normalized")
    if times[0] != 0:
        raise ValueError("time grid must start at 0")
    if len(times) > 1:
        steps = np.diff(times)
        if np.ptp(steps) > 1e-9 * steps[0]:
            raise ValueError("time grid must be evenly spaced")
        U = expm(-1j * H * steps[0])
    out = np.empty((len(times), len(psi)), dtype=np.complex128)
    lognorm = np.zeros(len(times))
    out[0] = psi
    for i in range(1, len(times)):
        psi = U @ psi
        nrm = np.linalg.norm(psi)
        if not nrm > 1e-300:
            raise NormCollapseError(
                f"state norm collapsed to {nrm:.3e} at t={times[i]:.4g}; use a smaller dt"
            )
        psi = psi / nrm
        out[i] = psi
        lognorm[i] = lognorm[i - 1] + 2.0 * np.log(nrm)
    return (out, lognorm) if return_log_norm else out


def evolve_full_normalized(spec: ModelSpec, psi0, grid: TimeGrid) -> np.ndarray:
    """Normalized full-space states on the grid, shape (T, 2^N)."""
    if spec.n_sites > 10:
        raise ValueError("full-space evolution limited to N <= 10")
    return evolve_normalized(build_full_hamiltonian(spec), psi0, grid.times)


def initial_state(n: int, theta: float, phi: float) -> np.ndarray:
    """cos(theta/2)|0...0> + e^{i phi} sin(theta/2)|1 0...0>, the sender's qubit on site 1."""
    psi = np.zeros(2**n, dtype=np.complex128)
    psi[0] = np.cos(theta / 2)
    psi[1 << (n - 1)] = np.exp(1j * phi) * np.sin(theta / 2)
    return psi

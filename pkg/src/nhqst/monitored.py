"""Weakly monitored chain: site-local Kraus operators from auxiliary-qubit
measurements, post-selected no-click trajectories, and their convergence to
the effective non-Hermitian evolution.

Each site k couples to an auxiliary qubit prepared in |g(k)> with
g(k) = 0 on odd sites and 1 on even sites. The post-selected outcome is m = 1
on odd sites and m = 0 on even sites. Both selected operators are diagonal:
odd sites damp |0> by cos(eps) and even sites damp |1> by cos(eps). With
eps^2 = kappa*dt this realizes, to first order in dt, the generator
i*(kappa/4) * sum_k (-1)^(k+1) sigma^z_k, so an alternating imaginary field of
strength h2*J corresponds to a measurement rate kappa = 4*h2*J.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dynamics import evolve_normalized
from .linalg import LinalgError, expm
from .models import ModelSpec, build_full_hamiltonian


class ZeroProbabilityError(LinalgError):
    pass


def kraus_operators(g: int, omega: int, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """(K_0, K_1) for auxiliary preparation |omega> = |g>, in the (|0>, |1>) basis."""
    if g not in (0, 1) or omega != g:
        raise ValueError(f"unsupported (g, omega) = ({g}, {omega}); need omega == g in {{0, 1}}")
    c, s = math.cos(epsilon), math.sin(epsilon)
    if g == 0:
        K0 = np.array([[1j * s, 0], [0, 0]], dtype=np.complex128)
        K1 = np.array([[c, 0], [0, 1]], dtype=np.complex128)
    else:
        K0 = np.array([[1, 0], [0, c]], dtype=np.complex128)
        K1 = np.array([[0, 0], [0, 1j * s]], dtype=np.complex128)
    return K0, K1


@dataclass(frozen=True)
class MeasurementScheme:
    """Measurement rate ``h2_strength`` (kappa) and step ``dt``; eps^2 = kappa*dt.

    ``swap_parity`` exchanges the roles of odd and even sites, which flips the
    sign of the effective alternating field.
    """

    h2_strength: float
    dt: float
    swap_parity: bool = False

    def __post_init__(self):
        if self.h2_strength < 0 or self.dt <= 0:
            raise ValueError("need h2_strength >= 0 and dt > 0")
        if self.epsilon > math.pi / 2:
            raise ValueError("h2_strength*dt too large: epsilon exceeds pi/2")

    @property
    def epsilon(self) -> float:
        return math.sqrt(self.h2_strength * self.dt)

    def g(self, k: int) -> int:
        """Auxiliary preparation for site k (1-based)."""
        odd = k % 2 == 1
        return int(odd == self.swap_parity)

    def selected_outcome(self, k: int) -> int:
        return 1 - self.g(k)

    def site_operators(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        g = self.g(k)
        return kraus_operators(g, g, self.epsilon)

    def selected_diagonal(self, n: int) -> np.ndarray:
        """Diagonal of the product of post-selected operators over all n sites."""
        idx = np.arange(2**n)
        d = np.ones(2**n, dtype=np.complex128)
        for k in range(1, n + 1):
            K = self.site_operators(k)[self.selected_outcome(k)]
            bit = (idx >> (n - k)) & 1
            d *= np.diag(K)[bit]
        return d


def _n_sites(dim: int) -> int:
    n = int(round(math.log2(dim)))
    if 2**n != dim:
        raise ValueError("state dimension must be a power of two")
    return n


def no_click_step(psi, H1, dt: float, scheme: MeasurementScheme, U=None, D=None):
    """One unitary step followed by the post-selected measurement on every site.

    Returns (normalized state, log of the selection probability).
    ``U`` and ``D`` may be passed to reuse exp(-i H1 dt) and the Kraus diagonal.
    """
    psi = np.asarray(psi, dtype=np.complex128)
    if U is None:
        U = expm(-1j * np.asarray(H1, dtype=np.complex128) * dt)
    if D is None:
        D = scheme.selected_diagonal(_n_sites(len(psi)))
    out = D * (U @ psi)
    p = float(np.vdot(out, out).real)
    if not p > 0:
        raise ZeroProbabilityError("post-selected branch has zero probability")
    return out / math.sqrt(p), math.log(p)


@dataclass(frozen=True)
class TrajectoryResult:
    times: np.ndarray
    states: np.ndarray
    survival_log_prob: np.ndarray  # cumulative, starts at 0
    deviations: np.ndarray  # phase-aligned distance to the nH state, per time
    nh_log_norm: np.ndarray  # log ||exp(-iHt) psi0||^2 of the nH target

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.deviations))


def ray_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """min over phi of ||a - e^{i phi} b|| for unit vectors (batched on axis 0)."""
    ov = np.sum(np.conj(b) * a, axis=-1)
    ph = np.exp(1j * np.angle(ov))
    return np.linalg.norm(a - ph[..., None] * b, axis=-1)


def hermitian_part(spec: ModelSpec) -> ModelSpec:
    if spec.kind == "ixy":
        return spec.with_(gamma=0.0)
    return spec.with_(h2=0.0)


def scheme_for(spec: ModelSpec, dt: float) -> MeasurementScheme:
    """Measurement scheme whose no-click limit reproduces the spec's imaginary field."""
    if spec.kind == "ixy":
        raise ValueError("the monitored-bath construction realizes alternating fields only")
    strength = spec.h2 * spec.coupling
    # a negative strength means the opposite stagger: swap the parity rule
    signed = strength * spec.stagger_sign
    return MeasurementScheme(4.0 * abs(signed), dt, swap_parity=signed < 0)


def trajectory_vs_nh(spec: ModelSpec, psi0, T: float, dt: float) -> TrajectoryResult:
    """Post-selected trajectory against normalized exp(-i H_nH t) psi0."""
    if spec.n_sites > 8:
        raise ValueError("trajectory comparison limited to N <= 8")
    if not spec.non_hermitian:
        raise ValueError("need the non-Hermitian variant")
    n_steps = int(round(T / dt))
    times = np.arange(n_steps + 1) * dt
    psi0 = np.asarray(psi0, dtype=np.complex128)
    scheme = scheme_for(spec, dt)
    H1 = build_full_hamiltonian(hermitian_part(spec))
    U = expm(-1j * H1 * dt)
    D = scheme.selected_diagonal(spec.n_sites)

    states = np.empty((len(times), len(psi0)), dtype=np.complex128)
    logp = np.zeros(len(times))
    psi = psi0 / np.linalg.norm(psi0)
    states[0] = psi
    for i in range(1, len(times)):
        psi, lp = no_click_step(psi, H1, dt, scheme, U=U, D=D)
        states[i] = psi
        logp[i] = logp[i - 1] + lp

    target, lognorm = evolve_normalized(
        build_full_hamiltonian(spec), psi0 / np.linalg.norm(psi0), times, return_log_norm=True
    )
    return TrajectoryResult(times, states, logp, ray_distance(states, target), lognorm)


@dataclass(frozen=True)
class SampledTrajectory:
    clicks: list  # (step, site, outcome) for every non-selected outcome
    final_state: np.ndarray
    seed: int
    steps: int

    @property
    def no_click(self) -> bool:
        return not self.clicks


@lru_cache(maxsize=32)
def _sampler_setup(spec: ModelSpec, dt: float):
    n = spec.n_sites
    scheme = scheme_for(spec, dt)
    U = expm(-1j * build_full_hamiltonian(hermitian_part(spec)) * dt)
    idx = np.arange(2**n)
    site_diag = []
    for k in range(1, n + 1):
        bit = (idx >> (n - k)) & 1
        K0, K1 = scheme.site_operators(k)
        site_diag.append((np.diag(K0)[bit], np.diag(K1)[bit], scheme.selected_outcome(k)))
    return U, tuple(site_diag)


def sample_trajectory(
    spec: ModelSpec, psi0, T: float, dt: float, seed: int, stop_at_first_click: bool = False
) -> SampledTrajectory:
    """Unconditioned monitored evolution: outcomes drawn with Born probabilities.

    Sites are measured in order 1..N after each unitary step; every outcome
    other than the post-selected one is logged as a click.
    """
    rng = np.random.default_rng(seed)
    n_steps = int(round(T / dt))
    U, site_diag = _sampler_setup(spec, float(dt))
    psi = np.asarray(psi0, dtype=np.complex128)
    psi = psi / np.linalg.norm(psi)
    clicks = []
    done = 0
    for step in range(1, n_steps + 1):
        done = step
        psi = U @ psi
        for k, (d0, d1, sel) in enumerate(site_diag, start=1):
            p1 = float(np.abs(psi) ** 2 @ (np.abs(d1) ** 2))
            m = 1 if rng.random() < p1 else 0
            psi = (d1 if m else d0) * psi
            psi = psi / np.linalg.norm(psi)
            if m != sel:
                clicks.append((step, k, m))
        if stop_at_first_click and clicks:
            break
    return SampledTrajectory(clicks, psi, int(seed), done)

"""Unbroken/broken classification of spectra and exceptional-boundary search."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .linalg import eig_general, max_norm
from .models import ModelSpec, build_full_hamiltonian, build_sector_hamiltonian

log = logging.getLogger(__name__)

UNBROKEN = "Unbroken"
BROKEN = "Broken"


class NoSignChangeError(ValueError):
    """Both ends of a bracket fall in the same regime."""


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: np.ndarray
    regime: str
    max_abs_imag: float
    tolerance: float
    eigvec_condition: float = 1.0

    @property
    def broken(self) -> bool:
        return self.regime == BROKEN

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "max_abs_imag": self.max_abs_imag,
            "tolerance": self.tolerance,
            "eigvec_condition": self.eigvec_condition,
            "n_eigenvalues": int(len(self.eigenvalues)),
        }


def classify_spectrum(H, tolerance: float | None = None) -> SpectrumReport:
    """Broken iff some eigenvalue has |Im| above ``tolerance``.

    The default tolerance is 1e-9 * max|H_ij|, so it scales with the couplings.
    """
    H = np.asarray(H)
    if tolerance is None:
        tolerance = 1e-9 * max(max_norm(H), 1e-300)
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    dec = eig_general(H)
    mai = float(np.max(np.abs(dec.eigenvalues.imag))) if len(dec.eigenvalues) else 0.0
    regime = BROKEN if mai > tolerance else UNBROKEN
    return SpectrumReport(dec.eigenvalues, regime, mai, float(tolerance), dec.condition)


def model_matrix(spec: ModelSpec) -> np.ndarray:
    """Sector matrix for U(1) kinds, full matrix otherwise."""
    return build_sector_hamiltonian(spec) if spec.u1 else build_full_hamiltonian(spec)


def classify_model(spec: ModelSpec, tolerance: float | None = None) -> SpectrumReport:
    return classify_spectrum(model_matrix(spec), tolerance)


def exceptional_boundary(
    template: ModelSpec,
    scan_axis: str,
    bracket: tuple[float, float],
    fixed: dict | None = None,
    tolerance: float = 1e-6,
) -> float:
    """Bisect ``scan_axis`` inside ``bracket`` for the unbroken/broken switch.

    ``fixed`` holds other ModelSpec fields to set first (e.g. ``{"h1": 0.25}``).
    """
    base = template.with_(**(fixed or {}))
    lo, hi = map(float, bracket)

    def broken(x: float) -> bool:
        rep = classify_model(base.with_(**{scan_axis: x}))
        log.debug("%s=%.9g regime=%s cond=%.3g", scan_axis, x, rep.regime, rep.eigvec_condition)
        return rep.broken

    b_lo, b_hi = broken(lo), broken(hi)
    if b_lo == b_hi:
        raise NoSignChangeError(
            f"no sign change: {scan_axis}={lo} and {scan_axis}={hi} are both "
            f"{BROKEN if b_lo else UNBROKEN}"
        )
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if broken(mid) == b_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)

"""Dense complex linear algebra kernel.

Thin, validated wrappers around LAPACK (via numpy/scipy): general and
Hermitian eigendecomposition and the matrix exponential. Everything here is
pure; inputs are never modified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

# condition number of the eigenvector matrix above which a spectrum is
# treated as sitting on (or numerically at) an exceptional point
DEFECTIVE_CONDITION = 1e10


class LinalgError(RuntimeError):
    """Base class for numerical failures in this package."""


class EigenConvergenceError(LinalgError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class NonHermitianInputError(LinalgError, ValueError):
    def __init__(self, asymmetry: float):
        super().__init__(f"matrix is not Hermitian: max|M - M^H| = {asymmetry:.3e}")
        self.asymmetry = asymmetry


class ExpmOverflowError(LinalgError):
    pass


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray
    vectors: np.ndarray  # right eigenvectors as columns
    condition: float
    residual: float

    @property
    def near_defective(self) -> bool:
        return not np.isfinite(self.condition) or self.condition > DEFECTIVE_CONDITION


def as_matrix(m) -> np.ndarray:
    """Return `m` as a fresh complex128 square matrix, rejecting NaN/Inf."""
    a = np.array(m, dtype=np.complex128, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def max_norm(m: np.ndarray) -> float:
    return float(np.max(np.abs(m))) if m.size else 0.0


def _residual(m: np.ndarray, w: np.ndarray, p: np.ndarray) -> float:
    return max_norm(m @ p - p * w[None, :])


def eig_general(m) -> EigenDecomposition:
    """Eigendecomposition of an arbitrary square matrix.

    Eigenvalues are returned sorted by (real, imag) so that repeated calls on
    the same input give the same order. Columns of ``vectors`` have unit norm.
    """
    a = as_matrix(m)
    try:
        w, p = scipy.linalg.eig(a, check_finite=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise EigenConvergenceError(str(exc), float("nan")) from exc
    order = np.lexsort((np.round(w.imag, 12), np.round(w.real, 12)))
    w, p = w[order], p[:, order]
    p = p / np.linalg.norm(p, axis=0)[None, :]
    res = _residual(a, w, p)
    scale = max(max_norm(a), 1.0)
    if not np.isfinite(res) or res > 1e-9 * scale:
        raise EigenConvergenceError("eigendecomposition did not converge", res)
    with np.errstate(all="ignore"):
        cond = float(np.linalg.cond(p)) if a.shape[0] else 1.0
    return EigenDecomposition(w, p, cond, res)


def eig_hermitian(m) -> EigenDecomposition:
    """Eigendecomposition of a Hermitian matrix: ascending real eigenvalues."""
    a = as_matrix(m)
    asym = max_norm(a - a.conj().T)
    if asym > 1e-12 * max_norm(a):
        raise NonHermitianInputError(asym)
    w, p = np.linalg.eigh(a)
    w = w.astype(np.complex128)
    return EigenDecomposition(w, p, 1.0, _residual(a, w, p))


def expm(m) -> np.ndarray:
    """Matrix exponential (scaling and squaring with Pade approximants)."""
    a = as_matrix(m)
    with np.errstate(over="ignore", invalid="ignore"):
        out = scipy.linalg.expm(a)
    if not np.all(np.isfinite(out)):
        raise ExpmOverflowError(
            "matrix exponential overflowed; propagate in smaller steps and "
            "renormalize the state after each step"
        )
    return out

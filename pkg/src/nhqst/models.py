"""Chain Hamiltonians: XX, SSH and iXY, in the full 2^N space and in the
single-excitation sector, plus the parity and rotation symmetry operators.

Basis conventions
-----------------
Site 1 is the most significant bit of a basis index. The local basis is
{|0>, |1>} with sigma^z|1> = +|1> and sigma^z|0> = -|0>. The sector state
|k> carries the single excitation on site k (1-based).

The non-Hermitian variant is H1 + i*H2, the Hermitian variant H1 + H2, where
H2 is the alternating field (XX, SSH) or the anisotropic coupling (iXY).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

MAX_FULL_SITES = 12

KINDS = ("xx", "ssh", "ixy")
VARIANTS = ("nh", "hermitian")

# sign conventions that reproduce the published maps; see README
DEFAULT_SIGNS = {
    "xx": (-1, +1),
    "ssh": (+1, -1),
    "ixy": (+1, +1),
}

_KIND_FIELDS = {
    "xx": {"h1", "h2"},
    "ssh": {"h1", "h2", "j2_ratio"},
    "ixy": {"h", "gamma"},
}
_OPTIONAL = ("j2_ratio", "h1", "h2", "h", "gamma")


class CapacityError(ValueError):
    """Requested a dense full-space matrix that is too large."""


class UnsupportedModelError(ValueError):
    """Operation not defined for this kind of model."""


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of a chain Hamiltonian.

    Fields that do not apply to ``kind`` must stay ``None``; applicable ones
    default to zero (``j2_ratio`` defaults to 1). ``field_sign`` multiplies the
    uniform field and ``stagger_sign`` the alternating field; ``None`` picks the
    per-kind default from ``DEFAULT_SIGNS``.
    """

    kind: str
    n_sites: int
    coupling: float = 1.0
    j2_ratio: float | None = None
    h1: float | None = None
    h2: float | None = None
    h: float | None = None
    gamma: float | None = None
    variant: str = "nh"
    field_sign: int | None = None
    stagger_sign: int | None = None

    def __post_init__(self):
        kind = str(self.kind).lower()
        variant = str(self.variant).lower()
        if variant in ("h", "herm"):
            variant = "hermitian"
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "variant", variant)

        n = self.n_sites
        if isinstance(n, bool) or int(n) != n or n < 2:
            raise ValueError(f"n_sites must be an integer >= 2, got {n!r}")
        object.__setattr__(self, "n_sites", int(n))
        if kind == "ssh" and n % 2:
            raise ValueError("SSH chains need an even number of sites")

        allowed = _KIND_FIELDS[kind]
        for name in _OPTIONAL:
            val = getattr(self, name)
            if name not in allowed:
                if val is not None:
                    raise ValueError(f"field {name!r} does not apply to kind {kind!r}")
                continue
            if val is None:
                val = 1.0 if name == "j2_ratio" else 0.0
            val = float(val)
            if not np.isfinite(val):
                raise ValueError(f"field {name!r} must be finite")
            object.__setattr__(self, name, val)
        if not np.isfinite(self.coupling):
            raise ValueError("coupling must be finite")
        object.__setattr__(self, "coupling", float(self.coupling))

        fs, ss = DEFAULT_SIGNS[kind]
        for name, default in (("field_sign", fs), ("stagger_sign", ss)):
            val = getattr(self, name)
            val = default if val is None else int(val)
            if val not in (-1, 1):
                raise ValueError(f"{name} must be +1 or -1")
            object.__setattr__(self, name, val)

    @property
    def non_hermitian(self) -> bool:
        return self.variant == "nh"

    @property
    def u1(self) -> bool:
        """True when total sigma^z is conserved (XX and SSH)."""
        return self.kind in ("xx", "ssh")

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    def hermitian(self) -> "ModelSpec":
        return replace(self, variant="hermitian")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model fields: {sorted(unknown)}")
        return cls(**data)


def bond_couplings(spec: ModelSpec) -> np.ndarray:
    """Coupling J_k on bond (k, k+1), k = 1..N-1 (array index k-1)."""
    J = np.full(spec.n_sites - 1, spec.coupling)
    if spec.kind == "ssh":
        J[1::2] *= spec.j2_ratio
    return J


def _stagger(n: int) -> np.ndarray:
    """(-1)^(k+1) for k = 1..n: +1 on odd sites."""
    return np.where(np.arange(n) % 2 == 0, 1.0, -1.0)


def _alt_strength(spec: ModelSpec) -> complex:
    """Prefactor of sum_k (-1)^(k+1) sigma^z_k, including the factor i for nH."""
    val = spec.stagger_sign * spec.coupling * spec.h2
    return 1j * val if spec.non_hermitian else val


def _site_bits(n: int) -> np.ndarray:
    """bits[k, i] = occupation of site k+1 in basis state i."""
    idx = np.arange(2**n)
    return ((idx[None, :] >> (n - 1 - np.arange(n))[:, None]) & 1).astype(np.int64)


def build_full_hamiltonian(spec: ModelSpec) -> np.ndarray:
    """Dense 2^N x 2^N Hamiltonian with open boundaries."""
    n = spec.n_sites
    if n > MAX_FULL_SITES:
        raise CapacityError(f"full-space matrix limited to N <= {MAX_FULL_SITES}, got {n}")
    dim = 2**n
    bits = _site_bits(n)
    sz = 2 * bits - 1
    idx = np.arange(dim)
    H = np.zeros((dim, dim), dtype=np.complex128)
    J = bond_couplings(spec)

    if spec.kind == "ixy":
        diag = spec.field_sign * spec.coupling * spec.h * sz.sum(axis=0)
        aniso = spec.coupling * spec.gamma * (1j if spec.non_hermitian else 1.0)
    else:
        diag = spec.field_sign * spec.coupling * spec.h1 * sz.sum(axis=0)
        diag = diag + _alt_strength(spec) * (_stagger(n) @ sz)
        aniso = 0.0
    H[idx, idx] = diag

    for k in range(n - 1):
        flip = idx ^ ((1 << (n - 1 - k)) | (1 << (n - 2 - k)))
        differ = bits[k] != bits[k + 1]
        # xx + yy = 2(s+s- + s-s+): exchanges 01 <-> 10
        H[flip[differ], idx[differ]] += 2.0 * J[k]
        if aniso != 0.0:
            # xx - yy = 2(s+s+ + s-s-): creates or removes a pair
            same = ~differ
            H[flip[same], idx[same]] += 2.0 * aniso
    return H


def _require_u1(spec: ModelSpec, what: str):
    if not spec.u1:
        raise UnsupportedModelError(
            f"{what} needs a U(1)-symmetric model (xx or ssh); {spec.kind} mixes "
            "excitation-number sectors"
        )


def reference_energy(spec: ModelSpec) -> complex:
    """Energy of the all-down state |0...0>, which is an eigenstate for U(1) kinds."""
    _require_u1(spec, "reference_energy")
    n = spec.n_sites
    uniform = -spec.field_sign * spec.coupling * spec.h1 * n
    alt = -_alt_strength(spec) * _stagger(n).sum()
    return complex(uniform + alt)


def build_sector_hamiltonian(spec: ModelSpec) -> np.ndarray:
    """N x N single-excitation block minus the vacuum energy."""
    _require_u1(spec, "build_sector_hamiltonian")
    n = spec.n_sites
    J = bond_couplings(spec)
    diag = 2.0 * spec.field_sign * spec.coupling * spec.h1 + 2.0 * _alt_strength(spec) * _stagger(n)
    M = np.diag(diag.astype(np.complex128))
    off = np.arange(n - 1)
    M[off, off + 1] = 2.0 * J
    M[off + 1, off] = 2.0 * J
    return M


def sector_basis_indices(n: int) -> np.ndarray:
    """Full-space index of |k>, k = 1..n."""
    return np.array([1 << (n - k) for k in range(1, n + 1)])


def total_sz(n: int) -> np.ndarray:
    return np.diag((2 * _site_bits(n) - 1).sum(axis=0).astype(np.complex128))


@dataclass(frozen=True)
class SymmetryOperator:
    """Unitary part S of an anti-unitary symmetry S*T (T = complex conjugation)."""

    label: str
    matrix: np.ndarray = field(repr=False)


def build_parity(n: int) -> SymmetryOperator:
    """Site reversal k -> N-k+1 as a permutation of the 2^N basis."""
    if n < 2:
        raise ValueError("need n >= 2")
    bits = _site_bits(n)
    weights = 1 << np.arange(n)  # reversed significance
    target = (bits * weights[:, None]).sum(axis=0)
    P = np.zeros((2**n, 2**n), dtype=np.complex128)
    P[target, np.arange(2**n)] = 1.0
    return SymmetryOperator("P", P)


def build_rotation(n: int) -> SymmetryOperator:
    """R = prod_k exp(-i pi/4 sigma^z_k), diagonal in the computational basis."""
    if n < 2:
        raise ValueError("need n >= 2")
    total = (2 * _site_bits(n) - 1).sum(axis=0)
    return SymmetryOperator("R", np.diag(np.exp(-1j * np.pi / 4 * total)))


def check_st_symmetry(H: np.ndarray, S: SymmetryOperator, rtol: float = 1e-10) -> bool:
    """True iff S^dag H S equals conj(H), i.e. H commutes with S*T."""
    H = np.asarray(H)
    M = S.matrix
    if M.shape != H.shape:
        raise ValueError(f"dimension mismatch: H {H.shape}, S {M.shape}")
    diff = M.conj().T @ H @ M - H.conj()
    scale = float(np.max(np.abs(H))) if H.size else 0.0
    return float(np.max(np.abs(diff))) <= rtol * scale


def pauli_on_site(n: int, k: int, which: str) -> np.ndarray:
    """Dense sigma^which acting on site k (1-based) of an n-site chain."""
    single = {
        "x": np.array([[0, 1], [1, 0]], dtype=np.complex128),
        "y": np.array([[0, 1j], [-1j, 0]], dtype=np.complex128),
        "z": np.array([[-1, 0], [0, 1]], dtype=np.complex128),
    }[which]
    # local basis order is (|0>, |1>) and sigma^z|1> = +|1>, so
    # sigma^+ = |1><0| and sigma^y = -i|1><0| + i|0><1|
    out = np.ones((1, 1), dtype=np.complex128)
    for site in range(1, n + 1):
        out = np.kron(out, single if site == k else np.eye(2))
    return out

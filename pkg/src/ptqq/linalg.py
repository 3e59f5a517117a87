"""Dense complex-matrix operations shared by the whole pipeline.

Index convention, fixed globally: the composite index of a bipartite matrix
is (i, k) -> i*n + k with subsystem A slowest.  Eigenvalues are always
returned ascending with a stable tie order.
"""
from dataclasses import dataclass

import numpy as np

from . import _backend

HERMITICITY_TOL = 1e-10


class DimensionError(ValueError):
    """Shapes inconsistent with the requested operation."""


@dataclass(frozen=True)
class BipartiteDims:
    m: int
    n: int

    def __post_init__(self):
        if self.m < 2 or self.n < 2:
            raise DimensionError(f"local dimensions must be >= 2, got {self.m}x{self.n}")

    @property
    def total(self):
        return self.m * self.n


DIMS_2x4 = BipartiteDims(2, 4)


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray   # (n,) real, ascending
    eigenvectors: np.ndarray  # (n, n), eigenvectors in columns


def kron(a, b):
    return np.kron(np.asarray(a, dtype=np.complex128), np.asarray(b, dtype=np.complex128))


def _require_square(mat, op):
    mat = np.asarray(mat, dtype=np.complex128)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"{op} requires a square matrix, got shape {mat.shape}")
    return mat


def herm_eig(h):
    """Full eigendecomposition of a Hermitian matrix.

    The input is symmetrized as (H + H^dag)/2 before solving; anything
    further than HERMITICITY_TOL * ||H|| from Hermitian is rejected.
    """
    h = _require_square(h, "herm_eig")
    norm = np.linalg.norm(h)
    if norm > 0 and np.linalg.norm(h - h.conj().T) > 2 * HERMITICITY_TOL * norm:
        raise ValueError("matrix is not Hermitian within tolerance")
    sym = 0.5 * (h + h.conj().T)
    vals, vecs = _backend.eigh_batch(sym[None, :, :], want_vectors=True)
    return EigenDecomposition(vals[0], vecs[0])


def eigvalsh_batch(mats):
    """Ascending eigenvalues for a (B, n, n) Hermitian batch (hot path)."""
    mats = np.asarray(mats, dtype=np.complex128)
    sym = 0.5 * (mats + mats.conj().transpose(0, 2, 1))
    vals, _ = _backend.eigh_batch(sym, want_vectors=False)
    return vals


def eigh_full_batch(mats):
    """Ascending eigenvalues and eigenvector columns for a Hermitian batch."""
    mats = np.asarray(mats, dtype=np.complex128)
    sym = 0.5 * (mats + mats.conj().transpose(0, 2, 1))
    return _backend.eigh_batch(sym, want_vectors=True)


def partial_transpose(rho, dims=DIMS_2x4, side="A"):
    """Transpose the indices of one tensor factor only."""
    rho = _require_square(rho, "partial_transpose")
    m, n = dims.m, dims.n
    if rho.shape[0] != m * n:
        raise DimensionError(f"expected {m * n}x{m * n} matrix, got {rho.shape}")
    four = rho.reshape(m, n, m, n)
    if side == "A":
        four = four.transpose(2, 1, 0, 3)
    elif side == "B":
        four = four.transpose(0, 3, 2, 1)
    else:
        raise ValueError(f"side must be 'A' or 'B', got {side!r}")
    return four.reshape(m * n, m * n)


def partial_transpose_batch(rhos, dims=DIMS_2x4, side="A"):
    rhos = np.asarray(rhos, dtype=np.complex128)
    m, n = dims.m, dims.n
    four = rhos.reshape(-1, m, n, m, n)
    if side == "A":
        four = four.transpose(0, 3, 2, 1, 4)
    elif side == "B":
        four = four.transpose(0, 1, 4, 3, 2)
    else:
        raise ValueError(f"side must be 'A' or 'B', got {side!r}")
    return four.reshape(-1, m * n, m * n)


def partial_trace(rho, dims=DIMS_2x4, keep="A"):
    """Reduced matrix on one subsystem."""
    rho = _require_square(rho, "partial_trace")
    m, n = dims.m, dims.n
    if rho.shape[0] != m * n:
        raise DimensionError(f"expected {m * n}x{m * n} matrix, got {rho.shape}")
    four = rho.reshape(m, n, m, n)
    if keep == "A":
        return np.einsum("ikjk->ij", four)
    if keep == "B":
        return np.einsum("kikj->ij", four)
    raise ValueError(f"keep must be 'A' or 'B', got {keep!r}")


def permute_factors(mat, factor_dims, perm):
    """Conjugate a matrix on a tensor-product space by a factor permutation.

    perm[j] gives, for slot j of the output ordering, the index of the input
    factor that lands there.
    """
    mat = _require_square(mat, "permute_factors")
    factor_dims = list(factor_dims)
    total = int(np.prod(factor_dims))
    if mat.shape[0] != total:
        raise DimensionError(f"factor dims {factor_dims} do not multiply to {mat.shape[0]}")
    perm = list(perm)
    if sorted(perm) != list(range(len(factor_dims))):
        raise ValueError(f"invalid permutation {perm}")
    k = len(factor_dims)
    tens = mat.reshape(factor_dims + factor_dims)
    axes = perm + [p + k for p in perm]
    return tens.transpose(axes).reshape(total, total)


def svd_rect(t):
    """Descending singular values of a real matrix with <= columns rows.

    Computed as square roots of the eigenvalues of T T^T, per the small
    (3x15) case this pipeline needs.
    """
    t = np.asarray(t, dtype=np.float64)
    gram = t @ t.T
    vals = np.linalg.eigvalsh(gram)
    return np.sqrt(np.clip(vals[::-1], 0.0, None))


def svd_rect_batch(ts):
    ts = np.asarray(ts, dtype=np.float64)
    gram = ts @ ts.transpose(0, 2, 1)
    vals = np.linalg.eigvalsh(gram)
    return np.sqrt(np.clip(vals[:, ::-1], 0.0, None))

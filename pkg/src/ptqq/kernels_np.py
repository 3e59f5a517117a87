"""Pure-numpy fallback kernels (LAPACK-backed batched eigendecomposition)."""
import numpy as np


def eigh_batch(mats, want_vectors=True):
    """Eigendecompose a (B, n, n) batch of Hermitian matrices.

    Returns (eigvals, eigvecs) with eigenvalues ascending; eigvecs is None
    when want_vectors is False.
    """
    mats = np.asarray(mats, dtype=np.complex128)
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise ValueError("expected a (B, n, n) batch of square matrices")
    if want_vectors:
        vals, vecs = np.linalg.eigh(mats)
        return vals, vecs
    return np.linalg.eigvalsh(mats), None

"""Kernel backend selection.

The compiled Jacobi core is preferred when the extension built; set
PTQQ_BACKEND=numpy (or compiled) to force a choice, e.g. for benchmarking.
"""
import os

from . import kernels_np

_requested = os.environ.get("PTQQ_BACKEND", "").strip().lower()

_compiled = None
if _requested != "numpy":
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
        if _requested == "compiled":
            raise ImportError(
                "PTQQ_BACKEND=compiled but the ptqq._kernels extension is "
                "not built; reinstall with a C compiler available"
            )

BACKEND = "compiled" if _compiled is not None else "numpy"


def eigh_batch(mats, want_vectors=True):
    if _compiled is not None:
        return _compiled.jacobi_eigh_batch(mats, want_vectors)
    return kernels_np.eigh_batch(mats, want_vectors)

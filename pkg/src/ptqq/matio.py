"""Binary matrix blocks.

Block layout: 16-byte header (magic ``PTCM``, u32 rows, u32 cols, u32
reserved, little-endian) followed by 2*rows*cols little-endian float64
values, (re, im) interleaved, row-major.
"""
import struct

import numpy as np

MAGIC = b"PTCM"
_HEADER = struct.Struct("<4sIII")


def write_matrix(fh, mat):
    """Append one complex matrix block to a binary file object."""
    mat = np.asarray(mat, dtype=np.complex128)
    if mat.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    rows, cols = mat.shape
    fh.write(_HEADER.pack(MAGIC, rows, cols, 0))
    flat = np.empty(2 * rows * cols, dtype="<f8")
    flat[0::2] = mat.real.ravel()
    flat[1::2] = mat.imag.ravel()
    fh.write(flat.tobytes())


def read_matrix(fh):
    """Read one matrix block; returns None at end of file."""
    head = fh.read(_HEADER.size)
    if not head:
        return None
    if len(head) < _HEADER.size:
        raise ValueError("truncated block header")
    magic, rows, cols, _ = _HEADER.unpack(head)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    payload = fh.read(16 * rows * cols)
    if len(payload) < 16 * rows * cols:
        raise ValueError("truncated block payload")
    flat = np.frombuffer(payload, dtype="<f8")
    return (flat[0::2] + 1j * flat[1::2]).reshape(rows, cols)


def write_matrices(path, mats):
    with open(path, "wb") as fh:
        for mat in mats:
            write_matrix(fh, mat)


def read_matrices(path):
    out = []
    with open(path, "rb") as fh:
        while True:
            mat = read_matrix(fh)
            if mat is None:
                return out
            out.append(mat)

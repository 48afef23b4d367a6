"""Thin dense linear-algebra layer over numpy.

Every matrix in the package is a 2-D ``float64`` ndarray. The helpers here
validate shapes, keep results finite and fix the conventions used by the
rest of the code (descending spectra, column-first vectorization, the text
serialization used for datasets and checkpoints).
"""

from __future__ import annotations

import io
import os

import numpy as np

__all__ = [
    "as_matrix",
    "matmul",
    "singular_values",
    "sym_eigvals",
    "kron",
    "vec",
    "unvec",
    "spectral_norm",
    "log_spectral_extremes",
    "format_matrix",
    "parse_matrix",
    "save_matrix",
    "load_matrix",
]

# Refuse Kronecker products larger than this many entries (~2 GB of float64).
MAX_KRON_ENTRIES = 1 << 28


def as_matrix(a, name="matrix"):
    """Coerce ``a`` to a finite 2-D float64 array.

    Scalars become 1x1 and 1-D input becomes a column. Raises ``ValueError``
    on empty or non-finite input.
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("matmul overflowed")
    return out


def singular_values(a):
    """Singular values of ``a`` in descending order (length ``min(rows, cols)``)."""
    return np.linalg.svd(as_matrix(a), compute_uv=False)


def sym_eigvals(a):
    """Eigenvalues of a symmetric matrix, descending.

    The input is symmetrized as ``(a + a.T) / 2`` first so that small
    accumulation asymmetries do not leak into the spectrum.
    """
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"sym_eigvals needs a square matrix, got {a.shape}")
    return np.linalg.eigvalsh(0.5 * (a + a.T))[::-1]


def kron(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if rows * cols > MAX_KRON_ENTRIES:
        raise ValueError(f"kron result {rows}x{cols} exceeds the size cap")
    return np.kron(a, b)


def vec(a):
    """Column-first stacking of ``a`` into a 1-D vector."""
    return as_matrix(a).reshape(-1, order="F")


def unvec(v, rows, cols):
    """Inverse of :func:`vec`."""
    return np.asarray(v, dtype=np.float64).reshape(rows, cols, order="F")


def spectral_norm(a):
    return float(singular_values(a)[0])


def log_spectral_extremes(a):
    """``(log sigma_max, log sigma_min)`` of ``a``; ``-inf`` for a zero singular value."""
    s = singular_values(a)
    with np.errstate(divide="ignore"):
        return float(np.log(s[0])), float(np.log(s[-1]))


# -- text serialization ----------------------------------------------------


def format_matrix(a):
    """Render ``a`` as ``"rows cols"`` followed by one row per line in ``%.17g``."""
    a = as_matrix(a)
    buf = io.StringIO()
    buf.write(f"{a.shape[0]} {a.shape[1]}\n")
    for row in a:
        buf.write(" ".join("%.17g" % x for x in row))
        buf.write("\n")
    return buf.getvalue()


def parse_matrix(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty matrix text")
    header = lines[0].split()
    if len(header) != 2:
        raise ValueError(f"bad matrix header: {lines[0]!r}")
    rows, cols = int(header[0]), int(header[1])
    body = lines[1:]
    if len(body) != rows:
        raise ValueError(f"expected {rows} rows, found {len(body)}")
    data = np.array([[float(x) for x in ln.split()] for ln in body], dtype=np.float64)
    if data.shape != (rows, cols):
        raise ValueError(f"expected shape {(rows, cols)}, found {data.shape}")
    return as_matrix(data)


def save_matrix(path, a):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_matrix(a))


def load_matrix(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, encoding="utf-8") as fh:
        return parse_matrix(fh.read())

"""Checked dense matrix helpers.

Matrices are plain 2-D float64 ``numpy`` arrays stored row-major.
"""

import numpy as np

from adacnp.errors import DimensionError, NumericalError


def as_matrix(data, rows=None, cols=None):
    """Build a row-major float64 matrix, optionally from flat data."""
    arr = np.asarray(data, dtype=np.float64)
    if rows is not None and cols is not None:
        if arr.size != rows * cols:
            raise DimensionError(
                f"data length {arr.size} does not equal {rows} x {cols}"
            )
        arr = arr.reshape(rows, cols)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def matmul(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericalError("matrix product contains non-finite entries")
    return out

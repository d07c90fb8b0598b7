"""Helpers for validated, immutable numpy arrays."""

from __future__ import annotations

import numpy as np

from .errors import NumericError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def frozen_array(values, *, name: str = "array", dtype=None) -> np.ndarray:
    """Return an owned, read-only float array; rejects non-finite entries.

    Non-float inputs are promoted to float64 unless an explicit dtype is
    given. The returned array never aliases caller memory.
    """
    arr = np.array(values, copy=True)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr

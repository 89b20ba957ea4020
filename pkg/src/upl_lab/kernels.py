"""Kernel backend selection.

The compiled Cython module is used when it was built and importable;
otherwise the pure-Python module is used. Setting ``UPL_LAB_PURE_PYTHON=1``
forces the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

if os.environ.get("UPL_LAB_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def forward_backward(blank: np.ndarray, label: np.ndarray):
    blank = np.ascontiguousarray(blank, dtype=np.float64)
    label = np.ascontiguousarray(label, dtype=np.float64)
    if label.shape != (blank.shape[0], blank.shape[1] - 1):
        raise ValueError(f"label grid {label.shape} does not match blank grid {blank.shape}")
    if label.shape[1] == 0:
        # U = 0: make a (T, 0) array the compiled path can take as a memoryview
        label = np.zeros((blank.shape[0], 0), dtype=np.float64)
    return _impl.forward_backward(blank, label)


def edit_distance(ref, hyp) -> tuple[int, int, int]:
    if _impl is _kernels_py:
        return _kernels_py.edit_distance(ref, hyp)
    return _impl.edit_distance(np.asarray(ref, dtype=np.int_), np.asarray(hyp, dtype=np.int_))

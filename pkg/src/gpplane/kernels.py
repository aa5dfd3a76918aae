"""Hot-loop kernels, compiled when available.

The Cython extension ``gpplane._ckernels`` is used if it was built; otherwise
the numpy/pure-Python twins in :mod:`gpplane._fallback` are used. Set
``GPPLANE_PURE_PYTHON=1`` to force the fallback. Both backends return
identical values.
"""
from __future__ import annotations

import os

import numpy as np

from gpplane import _fallback

if os.environ.get("GPPLANE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from gpplane import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"


def label4(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Label 4-connected foreground components of a 2D boolean mask."""
    return _impl.label4(np.ascontiguousarray(mask, dtype=np.uint8))


def maxpool_forward(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    return _impl.maxpool_forward(np.ascontiguousarray(x), k)


def maxpool_backward(dout: np.ndarray, idx: np.ndarray, h: int, w: int, k: int) -> np.ndarray:
    return _impl.maxpool_backward(np.ascontiguousarray(dout), np.ascontiguousarray(idx), h, w, k)


def col2im(cols: np.ndarray, hp: int, wp: int, stride: int) -> np.ndarray:
    return _impl.col2im(np.ascontiguousarray(cols), hp, wp, stride)


def close1d(seq: np.ndarray, kernel: int) -> np.ndarray:
    return _impl.close1d(np.ascontiguousarray(seq, dtype=np.uint8), kernel)

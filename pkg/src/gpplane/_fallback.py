"""Pure-Python/numpy versions of the compiled kernels in ``_ckernels.pyx``.

Every function here returns exactly what its compiled twin returns, so the
backend choice never changes results.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _find(parent: list[int], a: int) -> int:
    root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        parent[a], a = root, parent[a]
    return root


def label4(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected labeling; labels are 1..n in raster order of first pixel."""
    h, w = mask.shape
    rows = mask.tolist()
    labels = [[0] * w for _ in range(h)]
    parent = [0]
    for y in range(h):
        row = rows[y]
        lab_row = labels[y]
        prev_row = labels[y - 1] if y > 0 else None
        for x in range(w):
            if not row[x]:
                continue
            up = prev_row[x] if prev_row is not None else 0
            left = lab_row[x - 1] if x > 0 else 0
            if up == 0 and left == 0:
                parent.append(len(parent))
                lab_row[x] = len(parent) - 1
            elif up == 0:
                lab_row[x] = left
            elif left == 0:
                lab_row[x] = up
            else:
                ru, rl = _find(parent, up), _find(parent, left)
                if ru < rl:
                    parent[rl] = ru
                elif rl < ru:
                    parent[ru] = rl
                lab_row[x] = min(ru, rl)
    remap = [0] * len(parent)
    count = 0
    for y in range(h):
        lab_row = labels[y]
        for x in range(w):
            lab = lab_row[x]
            if lab == 0:
                continue
            r = _find(parent, lab)
            if remap[r] == 0:
                count += 1
                remap[r] = count
            lab_row[x] = remap[r]
    return np.asarray(labels, dtype=np.int32).reshape(h, w), count


def _pool_windows(x: np.ndarray, k: int) -> np.ndarray:
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    v = x[:, :, : ho * k, : wo * k].reshape(n, c, ho, k, wo, k)
    return v.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)


def maxpool_forward(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    win = _pool_windows(x, k)
    idx = win.argmax(axis=-1).astype(np.int32)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool_backward(dout: np.ndarray, idx: np.ndarray, h: int, w: int, k: int) -> np.ndarray:
    n, c, ho, wo = dout.shape
    win = np.zeros((n, c, ho, wo, k * k), dtype=dout.dtype)
    np.put_along_axis(win, idx[..., None].astype(np.intp), dout[..., None], axis=-1)
    win = win.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
    dx = np.zeros((n, c, h, w), dtype=dout.dtype)
    dx[:, :, : ho * k, : wo * k] = win
    return dx


def col2im(cols: np.ndarray, hp: int, wp: int, stride: int) -> np.ndarray:
    """Scatter-add (N, Ho, Wo, C, k, k) patch gradients into a padded (N, C, Hp, Wp) grid."""
    n, ho, wo, c, k, _ = cols.shape
    dx = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    src = cols.transpose(0, 3, 4, 5, 1, 2)  # (N, C, k, k, Ho, Wo)
    for a in range(k):
        for b in range(k):
            dx[:, :, a : a + stride * ho : stride, b : b + stride * wo : stride] += src[:, :, a, b]
    return dx


def close1d(seq: np.ndarray, kernel: int) -> np.ndarray:
    """Dilation then erosion with a centred flat element, border replicated."""
    half = kernel // 2
    padded = np.pad(seq, half, mode="edge")
    dil = sliding_window_view(padded, kernel).max(axis=-1)
    padded = np.pad(dil, half, mode="edge")
    return sliding_window_view(padded, kernel).min(axis=-1).astype(np.uint8)

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Results are bit-identical to :mod:`gpplane._fallback`."""

import numpy as np

ctypedef fused real:
    float
    double


cdef inline int _find(int[::1] parent, int a) noexcept nogil:
    cdef int root = a, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


def label4(const unsigned char[:, ::1] mask):
    """4-connected labeling; labels are 1..n in raster order of first pixel."""
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    cdef Py_ssize_t y, x
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef int[:, ::1] labels = labels_arr
    parent_arr = np.zeros(h * w // 2 + 2, dtype=np.int32)
    cdef int[::1] parent = parent_arr
    cdef int nxt = 1, up, left, ru, rl, lab
    with nogil:
        for y in range(h):
            for x in range(w):
                if not mask[y, x]:
                    continue
                up = labels[y - 1, x] if y > 0 else 0
                left = labels[y, x - 1] if x > 0 else 0
                if up == 0 and left == 0:
                    parent[nxt] = nxt
                    labels[y, x] = nxt
                    nxt += 1
                elif up == 0:
                    labels[y, x] = left
                elif left == 0:
                    labels[y, x] = up
                else:
                    ru = _find(parent, up)
                    rl = _find(parent, left)
                    if ru < rl:
                        parent[rl] = ru
                    elif rl < ru:
                        parent[ru] = rl
                    labels[y, x] = ru if ru < rl else rl
    remap_arr = np.zeros(nxt, dtype=np.int32)
    cdef int[::1] remap = remap_arr
    cdef int count = 0, r
    with nogil:
        for y in range(h):
            for x in range(w):
                lab = labels[y, x]
                if lab == 0:
                    continue
                r = _find(parent, lab)
                if remap[r] == 0:
                    count += 1
                    remap[r] = count
                labels[y, x] = remap[r]
    return labels_arr, count


def maxpool_forward(real[:, :, :, ::1] x, int k):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // k, wo = x.shape[3] // k
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, ho, wo), dtype=dtype)
    idx_arr = np.empty((n, c, ho, wo), dtype=np.int32)
    cdef real[:, :, :, ::1] out = out_arr
    cdef int[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t i, j, a, b, p, q
    cdef real best, val
    cdef int bi
    with nogil:
        for i in range(n):
            for j in range(c):
                for p in range(ho):
                    for q in range(wo):
                        best = x[i, j, p * k, q * k]
                        bi = 0
                        for a in range(k):
                            for b in range(k):
                                val = x[i, j, p * k + a, q * k + b]
                                if val > best:
                                    best = val
                                    bi = a * k + b
                        out[i, j, p, q] = best
                        idx[i, j, p, q] = bi
    return out_arr, idx_arr


def maxpool_backward(real[:, :, :, ::1] dout, const int[:, :, :, ::1] idx,
                     Py_ssize_t h, Py_ssize_t w, int k):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1]
    cdef Py_ssize_t ho = dout.shape[2], wo = dout.shape[3]
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t i, j, p, q
    cdef int bi
    with nogil:
        for i in range(n):
            for j in range(c):
                for p in range(ho):
                    for q in range(wo):
                        bi = idx[i, j, p, q]
                        dx[i, j, p * k + bi // k, q * k + bi % k] = dout[i, j, p, q]
    return dx_arr


def col2im(real[:, :, :, :, :, ::1] cols, Py_ssize_t hp, Py_ssize_t wp, int stride):
    """Scatter-add (N, Ho, Wo, C, k, k) patch gradients into a padded (N, C, Hp, Wp) grid."""
    cdef Py_ssize_t n = cols.shape[0], ho = cols.shape[1], wo = cols.shape[2]
    cdef Py_ssize_t c = cols.shape[3], k = cols.shape[4]
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t i, p, q, j, a, b
    # (a, b) outermost: same accumulation order as the numpy fallback
    with nogil:
        for a in range(k):
            for b in range(k):
                for i in range(n):
                    for j in range(c):
                        for p in range(ho):
                            for q in range(wo):
                                dx[i, j, p * stride + a, q * stride + b] += cols[i, p, q, j, a, b]
    return dx_arr


def close1d(const unsigned char[::1] seq, int kernel):
    """Dilation then erosion with a centred flat element, border replicated."""
    cdef Py_ssize_t n = seq.shape[0], i, j, jj
    cdef int half = kernel // 2
    dil_arr = np.empty(n, dtype=np.uint8)
    out_arr = np.empty(n, dtype=np.uint8)
    cdef unsigned char[::1] dil = dil_arr
    cdef unsigned char[::1] out = out_arr
    cdef unsigned char acc
    with nogil:
        for i in range(n):
            acc = 0
            for j in range(i - half, i + half + 1):
                jj = 0 if j < 0 else (n - 1 if j >= n else j)
                if seq[jj]:
                    acc = 1
                    break
            dil[i] = acc
        for i in range(n):
            acc = 1
            for j in range(i - half, i + half + 1):
                jj = 0 if j < 0 else (n - 1 if j >= n else j)
                if not dil[jj]:
                    acc = 0
                    break
            out[i] = acc
    return out_arr

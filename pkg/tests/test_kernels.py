"""Compiled and fallback kernels agree with each other and with scipy."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy import ndimage

from gpplane import _fallback, kernels

try:
    from gpplane import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = [_fallback] + ([_ckernels] if _ckernels is not None else [])
needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")

masks = hnp.arrays(np.bool_, st.tuples(st.integers(1, 30), st.integers(1, 30)))


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("impl", BACKENDS)
@settings(max_examples=60, deadline=None)
@given(mask=masks)
def test_label4_matches_scipy(impl, mask):
    labels, n = impl.label4(mask.astype(np.uint8))
    ref, n_ref = ndimage.label(mask)  # default structure is 4-connected in 2D
    assert n == n_ref
    # same partition: a bijection between label ids
    fg = mask
    pairs = set(zip(labels[fg].tolist(), ref[fg].tolist()))
    assert len(pairs) == n
    assert np.all(labels[~fg] == 0)


@needs_ext
@settings(max_examples=60, deadline=None)
@given(mask=masks)
def test_label4_backends_identical(mask):
    a = _fallback.label4(mask.astype(np.uint8))
    b = _ckernels.label4(mask.astype(np.uint8))
    assert a[1] == b[1] and np.array_equal(a[0], b[0])


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_maxpool_backends_identical(dtype):
    rng = np.random.default_rng(0)
    x = rng.integers(-3, 3, size=(3, 4, 9, 7)).astype(dtype)  # many ties
    fo, fi = _fallback.maxpool_forward(x, 2)
    co, ci = _ckernels.maxpool_forward(x, 2)
    assert np.array_equal(fo, co) and np.array_equal(fi, ci)
    d = rng.normal(size=fo.shape).astype(dtype)
    assert np.array_equal(_fallback.maxpool_backward(d, fi, 9, 7, 2), _ckernels.maxpool_backward(d, ci, 9, 7, 2))


@pytest.mark.parametrize("impl", BACKENDS)
def test_maxpool_first_max_wins(impl):
    x = np.ones((1, 1, 2, 2), np.float64)
    out, idx = impl.maxpool_forward(x, 2)
    assert out.item() == 1 and idx.item() == 0
    out, _ = impl.maxpool_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), 2)
    assert out.item() == 4


@needs_ext
@pytest.mark.parametrize("stride", [1, 2])
def test_col2im_backends_identical(stride):
    rng = np.random.default_rng(1)
    k, ho, wo = 3, 5, 4
    hp, wp = (ho - 1) * stride + k, (wo - 1) * stride + k
    cols = rng.normal(size=(2, ho, wo, 3, k, k)).astype(np.float32)
    assert np.array_equal(_fallback.col2im(cols, hp, wp, stride), _ckernels.col2im(cols, hp, wp, stride))


@pytest.mark.parametrize("impl", BACKENDS)
def test_col2im_counts_overlaps(impl):
    k = 3
    cols = np.ones((1, 3, 3, 1, k, k))
    out = impl.col2im(cols, 5, 5, 1)
    expected = np.array([[min(i + 1, 3, 5 - i) for i in range(5)]])
    assert np.array_equal(out[0, 0], expected.T * expected)


def _close_oracle(seq, k):
    r = k // 2
    pad = np.concatenate([[seq[0]] * r, seq, [seq[-1]] * r])
    dil = np.array([pad[i : i + k].max() for i in range(len(seq))])
    pad = np.concatenate([[dil[0]] * r, dil, [dil[-1]] * r])
    return np.array([pad[i : i + k].min() for i in range(len(seq))])


@pytest.mark.parametrize("impl", BACKENDS)
@settings(max_examples=80, deadline=None)
@given(seq=hnp.arrays(np.uint8, st.integers(1, 80), elements=st.integers(0, 1)), k=st.sampled_from([1, 3, 5, 7]))
def test_close1d_matches_oracle(impl, seq, k):
    assert np.array_equal(impl.close1d(seq, k), _close_oracle(seq, k))

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy import ndimage

from gpplane.detect import (
    DetectionError,
    axial_close_decode,
    blob_rough_then_refine,
    close_binary_sequence,
    coarse_to_fine_regress,
    count_blobs,
    decode_last_before,
    encode_window_targets,
    ensemble_predictions,
    refine_stack,
    round_half_away,
    sliding_window_detect,
    window_starts,
)
from gpplane.phantom import PhantomSpec, generate_phantom
from gpplane.volgrid import Plane2D


# window targets


def test_encode_examples():
    assert encode_window_targets(132, 100, 64, "bm").p_linear == 1.0
    out = encode_window_targets(50, 100, 64, "sn")
    assert out.contains == 0 and out.offset_frac is None and out.p_linear == 0
    assert encode_window_targets(116, 100, 32, "sn").offset_frac == 0.5
    with pytest.raises(ValueError):
        encode_window_targets(1, 0, 8, "yolo")


@given(st.integers(0, 600), st.integers(2, 128), st.data())
def test_sn_roundtrip_within_one(start, length, data):
    gppi = data.draw(st.integers(start, start + length - 1))
    t = encode_window_targets(gppi, start, length, "sn")
    assert t.contains == 1
    assert abs(start + round_half_away(t.offset_frac * length) - gppi) <= 1


@given(st.integers(0, 300), st.integers(1, 64).map(lambda h: 2 * h), st.integers(0, 200))
def test_bm_symmetric_and_decreasing(start, length, d):
    centre = start + length // 2
    left = encode_window_targets(centre - d, start, length, "bm").p_linear
    right = encode_window_targets(centre + d, start, length, "bm").p_linear
    assert left == right
    nxt = encode_window_targets(centre + d + 1, start, length, "bm").p_linear
    assert nxt < right or right == 0
    if d >= length // 2:
        assert right == 0


# sliding windows


def test_window_starts_and_errors():
    assert len(window_starts(192, 32, 16)) == 11
    with pytest.raises(DetectionError):
        window_starts(10, 32, 1)
    with pytest.raises(ValueError):
        window_starts(64, 32, 0)


def test_bm_argmax_oracle():
    vol = np.zeros((192, 2, 2))
    scorer = lambda w, s: (s + 16 == 96).astype(float)
    assert sliding_window_detect(vol, scorer, 32, scheme="bm").gppi_pred == 96


def test_bm_ties_go_to_lowest_start():
    vol = np.zeros((100, 1, 1))
    det = sliding_window_detect(vol, lambda w, s: np.ones(len(s)), 20, 1, "bm")
    assert det.diagnostics["best_start"] == 0 and det.gppi_pred == 10


def test_sn_offset_decode():
    vol = np.zeros((192, 1, 1))

    def scorer(windows, starts):
        obj = np.where(starts == 100, 5.0, -5.0)
        return np.stack([obj, np.zeros(len(starts))], axis=1)

    det = sliding_window_detect(vol, scorer, 32, stride=4, scheme="sn")
    assert det.gppi_pred == 116


def test_sn_default_stride_is_16():
    seen = []
    sliding_window_detect(np.zeros((192, 1, 1)), lambda w, s: seen.extend(s) or np.zeros((len(s), 2)), 32, scheme="sn")
    assert seen == list(range(0, 161, 16))


def test_scorer_sees_window_content():
    vol = np.arange(50, dtype=float)[:, None, None] * np.ones((1, 2, 2))
    det = sliding_window_detect(vol, lambda w, s: -np.abs(w[:, 0, 0, 0] - 20.0), 10, 1, "bm")
    assert det.diagnostics["best_start"] == 20


# closing and decode


def _close_oracle(seq, k):
    r = k // 2
    a = np.asarray(seq, dtype=int)
    pad = np.concatenate([[a[0]] * r, a, [a[-1]] * r])
    dil = np.array([pad[i : i + k].max() for i in range(len(a))])
    pad = np.concatenate([[dil[0]] * r, dil, [dil[-1]] * r])
    return np.array([pad[i : i + k].min() for i in range(len(a))])


def test_close_examples():
    assert close_binary_sequence([1] * 7, 5).tolist() == [1] * 7
    assert close_binary_sequence([1, 1, 1, 0, 1, 1, 0, 0, 0, 0], 5).tolist() == [1, 1, 1, 1, 1, 1, 0, 0, 0, 0]
    with pytest.raises(ValueError):
        close_binary_sequence([1, 0], 4)


def test_close_random_sequences_match_oracle_and_are_idempotent():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        seq = (rng.random(rng.integers(5, 643)) < rng.random()).astype(np.uint8)
        once = close_binary_sequence(seq, 5)
        assert np.array_equal(once, _close_oracle(seq, 5))
        assert np.array_equal(close_binary_sequence(once, 5), once)


@given(hnp.arrays(np.uint8, st.integers(1, 200), elements=st.integers(0, 1)), st.sampled_from([1, 3, 5, 7, 9]))
def test_close_only_fills(seq, k):
    assert np.all(close_binary_sequence(seq, k) >= seq)


def test_decode_examples():
    assert decode_last_before([1, 1, 1, 0, 0]) == 2
    with pytest.raises(DetectionError):
        decode_last_before([0, 0, 0])


def test_decode_after_closing_short_sequence():
    # on five planes the replicated border lets a k=5 closing bridge to the end
    assert close_binary_sequence([1, 0, 1, 0, 0], 5).tolist() == [1, 1, 1, 1, 1]
    closed = close_binary_sequence([1, 0, 1, 0, 0, 0, 0, 0], 5)
    assert closed.tolist() == [1, 1, 1, 0, 0, 0, 0, 0]
    assert decode_last_before(closed) == 2


@settings(max_examples=200)
@given(st.integers(3, 150), st.integers(5, 150), st.data())
def test_decode_ignores_isolated_dropouts_inside_before_run(before, after, data):
    seq = np.array([1] * before + [0] * after, dtype=np.uint8)
    holes = data.draw(st.lists(st.integers(0, before - 2), max_size=before // 2, unique=True))
    noisy = seq.copy()
    for h in holes:
        if not any(abs(h - o) == 1 for o in holes):  # isolated
            noisy[h] = 0
    assert decode_last_before(close_binary_sequence(noisy, 5)) == before - 1


def test_axial_close_decode_offset():
    probs = np.r_[np.full(40, 0.9), [0.2, 0.8], np.full(30, 0.1)]
    probs[10] = 0.3
    gppi, closed = axial_close_decode(probs, 5)
    assert gppi == 42 and closed[10] == 1


# blobs


def test_count_blobs_examples():
    assert count_blobs(np.zeros((10, 10)), 0.5) == 0
    spec = PhantomSpec(noise_sigma=0)
    vol, ann = generate_phantom(spec)
    assert count_blobs(Plane2D(vol.voxels[ann.gppi - 5], "axial", 0), spec.threshold_hu) == 4
    assert count_blobs(vol.voxels[ann.gppi], spec.threshold_hu) == 1


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 25), st.integers(1, 25)), elements=st.floats(0, 1)))
def test_count_blobs_matches_scipy(plane):
    assert count_blobs(plane, 0.5) == ndimage.label(plane > 0.5)[1]


def test_count_blobs_is_four_connected():
    diag = np.eye(4)
    assert count_blobs(diag, 0.5) == 4


# rough + refine


def _phantom_planes():
    spec = PhantomSpec(noise_sigma=0)
    vol, ann = generate_phantom(spec)
    return vol, ann, spec


def test_blob_rough_refine_with_perfect_classifier():
    vol, ann, spec = _phantom_planes()
    planes = vol.voxels.astype(float)

    def classifier(x):
        return np.array([count_blobs(p[0], spec.threshold_hu) == 4 for p in x], dtype=float)

    det = blob_rough_then_refine(planes, classifier, lambda s: np.array([0.5]), 25)
    assert det.diagnostics["rough"] in (ann.gppi - 1, ann.gppi)
    assert det.gppi_pred == det.diagnostics["rough"]
    assert det.flags == ()


def test_blob_refine_clamps_and_flags():
    planes = np.zeros((60, 2, 2))
    classifier = lambda x: np.r_[np.ones(5), np.zeros(55)]
    det = blob_rough_then_refine(planes, classifier, lambda s: np.array([0.5]), 25)
    assert det.flags == ("stack_clamped",) and det.diagnostics["stack_start"] == 0
    with pytest.raises(DetectionError):
        blob_rough_then_refine(planes, lambda x: np.zeros(60), lambda s: np.array([0.5]))


def test_refine_stack():
    planes = np.arange(100)[:, None, None]
    stack, start, clamped = refine_stack(planes, 50, 25)
    assert stack.shape[0] == 51 and start == 25 and not clamped
    _, start, clamped = refine_stack(planes, 90, 25)
    assert start == 49 and clamped


# coarse to fine


def _step_stack(nz, gppi, c=3, w=4):
    stack = np.zeros((c, nz, w), np.float32)
    stack[:, gppi:] = 1.0
    return stack


def _oracle_regressor(x):
    """Fraction of the first plane at or above 0.5 along z."""
    col = x[0, 0, :, 0]
    return np.array([np.argmax(col >= 0.5) / len(col)])


@pytest.mark.parametrize("gppi", [5, 40, 96, 150, 185])
def test_coarse_to_fine_with_oracle_net(gppi):
    nz, L = 192, 64
    det = coarse_to_fine_regress(_step_stack(nz, gppi), _oracle_regressor, L)
    assert abs(det.diagnostics["coarse"] - gppi) <= int(np.ceil(nz / L))
    crop_start = det.diagnostics["crop_start"]
    assert crop_start <= gppi < crop_start + L
    assert det.gppi_pred == gppi


def test_coarse_fraction_decode():
    det = coarse_to_fine_regress(np.zeros((1, 192, 2)), lambda x: np.array([0.5]), 64)
    assert det.diagnostics["coarse"] == 96 and det.diagnostics["crop_start"] == 64
    assert det.gppi_pred == 96


def test_coarse_to_fine_rejects_long_crop():
    with pytest.raises(DetectionError):
        coarse_to_fine_regress(np.zeros((1, 32, 2)), _oracle_regressor, 32)


# ensembling


def test_ensemble_examples():
    assert ensemble_predictions([175]) == 175
    assert ensemble_predictions([175, 176, 176, 177, 175]) == 176
    assert ensemble_predictions([170, 171]) == 171
    with pytest.raises(ValueError):
        ensemble_predictions([])


def test_round_half_away():
    assert [round_half_away(x) for x in (0.5, 1.5, 2.5, -0.5, -2.5, 2.49)] == [1, 2, 3, -1, -3, 2]

"""Decoders that turn per-plane or per-window model outputs into one plane index.

Conventions used throughout: fractions become plane indices with
half-away-from-zero rounding; argmax ties go to the lowest window start;
closing replicates border values; blobs are 4-connected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from gpplane import kernels
from gpplane.micronet.net import sigmoid
from gpplane.prep import resize_axis_linear
from gpplane.volgrid import Plane2D


class DetectionError(ValueError):
    pass


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class WindowTarget:
    contains: int
    offset_frac: float | None
    p_linear: float


@dataclass
class Detection:
    volume_id: str
    gppi_pred: int
    method: str
    diagnostics: dict = field(default_factory=dict)
    flags: tuple = ()


def encode_window_targets(gppi: int, window_start: int, window_len: int, scheme: str = "sn") -> WindowTarget:
    """Supervision for one window.

    Both encodings are always filled in; ``scheme`` only validates the name.
    sn: contains = start <= gppi < start + len, offset_frac = (gppi - start) / len.
    bm: p_linear = max(0, 1 - |gppi - centre| / (len / 2)), centre = start + len / 2.
    """
    if scheme not in ("sn", "bm"):
        raise ValueError(f"unknown window scheme {scheme!r}")
    if window_len <= 0:
        raise ValueError("window_len must be positive")
    contains = int(window_start <= gppi < window_start + window_len)
    offset = (gppi - window_start) / window_len if contains else None
    centre = window_start + window_len / 2
    p = max(0.0, 1.0 - abs(gppi - centre) / (window_len / 2))
    return WindowTarget(contains, offset, p)


def window_starts(nz: int, window_len: int, stride: int) -> np.ndarray:
    if window_len > nz:
        raise DetectionError(f"window_len {window_len} exceeds nz {nz}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return np.arange(0, nz - window_len + 1, stride)


def sliding_window_detect(
    volume: np.ndarray,
    scorer,
    window_len: int,
    stride: int | None = None,
    scheme: str = "bm",
    volume_id: str = "",
    batch: int = 64,
) -> Detection:
    """Score every window along z and decode the best one.

    ``volume`` is a (nz, h, w) array. ``scorer(windows, starts)`` gets a
    batch of (n, window_len, h, w) windows plus their start planes and
    returns P values (bm) or (n, 2) [objectness logit, offset logit] (sn).
    Default strides: 16 for sn, 1 for bm.
    """
    vol = np.asarray(volume)
    nz = vol.shape[0]
    if stride is None:
        stride = 16 if scheme == "sn" else 1
    starts = window_starts(nz, window_len, stride)
    outs = []
    for i in range(0, len(starts), batch):
        chunk = starts[i : i + batch]
        windows = np.stack([vol[s : s + window_len] for s in chunk])
        outs.append(np.asarray(scorer(windows, chunk), dtype=np.float64))
    scores = np.concatenate(outs)
    if scheme == "bm":
        p = scores.reshape(len(starts))
        best = int(np.argmax(p))
        gppi = round_half_away(starts[best] + window_len / 2)
        trace = {"starts": starts.tolist(), "p": p.tolist()}
    elif scheme == "sn":
        scores = scores.reshape(len(starts), 2)
        obj = sigmoid(scores[:, 0])
        best = int(np.argmax(obj))
        frac = float(sigmoid(scores[best, 1]))
        gppi = int(starts[best]) + round_half_away(frac * window_len)
        trace = {"starts": starts.tolist(), "objectness": obj.tolist(), "offset": sigmoid(scores[:, 1]).tolist()}
    else:
        raise ValueError(f"unknown window scheme {scheme!r}")
    gppi = min(max(gppi, 0), nz - 1)
    return Detection(volume_id, gppi, f"window-{scheme}", {"best_start": int(starts[best]), **trace})


def close_binary_sequence(seq, kernel: int = 5) -> np.ndarray:
    """1-D morphological closing (dilation then erosion), border replicated."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    arr = np.asarray(seq)
    if arr.ndim != 1:
        raise ValueError("sequence must be 1-D")
    if arr.size == 0:
        return arr.astype(np.uint8)
    return kernels.close1d((arr != 0).astype(np.uint8), kernel)


def decode_last_before(seq) -> int:
    """Index of the last 1 ('before') in the sequence."""
    arr = np.asarray(seq)
    if arr.size == 0:
        raise DetectionError("empty sequence")
    hits = np.flatnonzero(arr)
    if hits.size == 0:
        raise DetectionError("no plane classified as 'before'")
    return int(hits[-1])


def count_blobs(plane, hu_threshold: float, connectivity: int = 4) -> int:
    """Number of 4-connected components of ``plane > hu_threshold``."""
    if connectivity != 4:
        raise ValueError("only 4-connectivity is supported")
    values = plane.values if isinstance(plane, Plane2D) else np.asarray(plane)
    return kernels.label4(values > hu_threshold)[1]


def axial_close_decode(probs, kernel: int = 5, threshold: float = 0.5, offset: int = 1) -> tuple[int, np.ndarray]:
    """Threshold per-plane 'before' probabilities, close, take last before.

    The growth plate plane is the first plane past the 'before' run, so the
    prediction is ``last_before + offset``.
    """
    closed = close_binary_sequence(np.asarray(probs) >= threshold, kernel)
    return decode_last_before(closed) + offset, closed


def refine_stack(planes: np.ndarray, centre: int, half_span: int = 25) -> tuple[np.ndarray, int, bool]:
    """The 2*half_span+1 planes centred on ``centre``, shifted inside the volume if needed.

    Returns (stack (2h+1, H, W), first plane index, clamped flag).
    """
    nz = planes.shape[0]
    depth = 2 * half_span + 1
    if depth > nz:
        raise DetectionError(f"stack depth {depth} exceeds nz {nz}")
    start = centre - half_span
    clamped_start = min(max(start, 0), nz - depth)
    return planes[clamped_start : clamped_start + depth], clamped_start, clamped_start != start


def blob_rough_then_refine(
    planes: np.ndarray,
    classifier,
    regressor,
    half_span: int = 25,
    volume_id: str = "",
    threshold: float = 0.5,
) -> Detection:
    """Rough estimate from a four-blob classifier, refined by stack regression.

    ``planes`` is the prepared (nz, H, W) array. ``classifier`` maps
    (n, 1, H, W) to four-blob probabilities; ``regressor`` maps a
    (1, 2h+1, H, W) stack to a fraction f. The plane is
    stack_start + round(f * 2h).
    """
    probs = np.asarray(classifier(planes[:, None]), dtype=np.float64).reshape(-1)
    positive = np.flatnonzero(probs >= threshold)
    if positive.size == 0:
        raise DetectionError("classifier found no four-blob plane")
    rough = int(positive[-1])
    stack, start, clamped = refine_stack(planes, rough, half_span)
    f = float(np.asarray(regressor(stack[None])).reshape(-1)[0])
    gppi = start + round_half_away(f * 2 * half_span)
    gppi = min(max(gppi, 0), planes.shape[0] - 1)
    flags = ("stack_clamped",) if clamped else ()
    diag = {"rough": rough, "fraction": f, "stack_start": start, "classifier": probs.tolist()}
    return Detection(volume_id, gppi, "blob-refine", diag, flags)


def coarse_to_fine_regress(
    stack: np.ndarray, regressor, crop_len: int, volume_id: str = "", fine_regressor=None
) -> Detection:
    """Two-pass long-axis regression.

    ``stack`` is (c, nz, w) with z on axis 1. Pass 1 linearly resamples z to
    ``crop_len`` and reads a coarse fraction f1 -> round(f1 * nz). Pass 2
    looks at the native-resolution crop of ``crop_len`` planes centred there
    (clamped to the volume) and returns crop_start + round(f2 * crop_len).
    ``regressor`` maps (n, c, crop_len, w) to fractions; ``fine_regressor``
    (default: the same net) is used for pass 2.
    """
    c, nz, w = stack.shape
    if crop_len >= nz:
        raise DetectionError(f"crop_len {crop_len} must be smaller than nz {nz}")
    if crop_len < 2:
        raise DetectionError("crop_len must be >= 2")
    coarse_in = resize_axis_linear(stack, crop_len, axis=1).astype(np.float32)
    f1 = float(np.asarray(regressor(coarse_in[None])).reshape(-1)[0])
    coarse = min(max(round_half_away(f1 * nz), 0), nz - 1)
    start = min(max(coarse - crop_len // 2, 0), nz - crop_len)
    crop = np.ascontiguousarray(stack[:, start : start + crop_len])
    fine = regressor if fine_regressor is None else fine_regressor
    f2 = float(np.asarray(fine(crop[None])).reshape(-1)[0])
    gppi = min(max(start + round_half_away(f2 * crop_len), 0), nz - 1)
    diag = {"coarse_fraction": f1, "coarse": coarse, "crop_start": start, "fine_fraction": f2}
    return Detection(volume_id, gppi, "long-axis", diag)


def ensemble_predictions(preds) -> int:
    """Rounded mean (half away from zero) of integer plane predictions."""
    preds = list(preds)
    if not preds:
        raise ValueError("no predictions to ensemble")
    return round_half_away(sum(preds) / len(preds))

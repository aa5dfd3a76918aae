"""Intensity windowing, geometric resampling and augmentation of volumes.

Clip ranges per team (HU): SN (-1000, 4000), MH (-1000, 3000), EK (500, 2000),
CW (0, 1900), BM (-100, 3171). Transforms that take an ``rng`` are
deterministic given the generator state.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from gpplane.volgrid import GppAnnotation, Plane2D, Volume, _voxels, extract_plane

TEAM_CLIP = {
    "SN": (-1000, 4000),
    "MH": (-1000, 3000),
    "EK": (500, 2000),
    "CW": (0, 1900),
    "BM": (-100, 3171),
}
EK_OFFSETS = (-15, -10, -5, 0, 5, 10, 15)
AIR_HU = -1000


class NoBoneError(ValueError):
    """No axial plane reaches the requested bone fraction."""


@dataclass(frozen=True)
class ClipRange:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"clip range needs lo < hi, got ({self.lo}, {self.hi})")


@dataclass(frozen=True)
class ChannelStack:
    channels: np.ndarray  # (c, h, w)
    source_indices: tuple
    axis: str
    label: float | None = None


def _as_range(r) -> ClipRange:
    return r if isinstance(r, ClipRange) else ClipRange(*r)


def clip_hu(v: Volume, r) -> Volume:
    r = _as_range(r)
    return Volume(v.id, np.clip(v.voxels, r.lo, r.hi), v.spacing_um)


def normalize_unit(v, r, dtype=np.float32) -> np.ndarray:
    """(clip(v) - lo) / (hi - lo), as a real-valued (nz, ny, nx) array."""
    r = _as_range(r)
    vox = _voxels(v).astype(np.float64)
    out = (np.clip(vox, r.lo, r.hi) - r.lo) / (r.hi - r.lo)
    return out.astype(dtype)


def _crop_or_pad_axis(a: np.ndarray, axis: int, target: int, fill) -> np.ndarray:
    size = a.shape[axis]
    if size > target:
        start = (size - target) // 2
        return np.take(a, np.arange(start, start + target), axis=axis)
    if size < target:
        before = (target - size) // 2
        pad = [(0, 0)] * a.ndim
        pad[axis] = (before, target - size - before)
        return np.pad(a, pad, mode="constant", constant_values=fill)
    return a


def crop_or_pad_xy(v, target: tuple[int, int], fill=AIR_HU):
    """Centre-crop or symmetrically pad the xy extent to ``target`` = (tx, ty).

    Odd size differences put the extra voxel on the high side. Works on a
    Volume (returns a Volume) or any array whose last two axes are (y, x).
    """
    tx, ty = target
    if tx <= 0 or ty <= 0:
        raise ValueError("crop target must be positive")
    a = _voxels(v)
    a = _crop_or_pad_axis(a, a.ndim - 1, tx, fill)
    a = _crop_or_pad_axis(a, a.ndim - 2, ty, fill)
    if isinstance(v, Volume):
        return Volume(v.id, a, v.spacing_um)
    return np.ascontiguousarray(a)


def _linear_weights(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # corner-aligned: output sample i sits at i*(src-1)/(dst-1)
    if dst == 1:
        pos = np.array([(src - 1) / 2.0])
    else:
        pos = np.arange(dst) * ((src - 1) / (dst - 1))
    i0 = np.clip(np.floor(pos).astype(np.intp), 0, src - 1)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, pos - i0


def resize_axis_linear(a: np.ndarray, size: int, axis: int) -> np.ndarray:
    """Corner-aligned linear interpolation of one axis to ``size`` samples."""
    i0, i1, frac = _linear_weights(a.shape[axis], size)
    shape = [1] * a.ndim
    shape[axis] = size
    frac = frac.reshape(shape)
    lo = np.take(a, i0, axis=axis).astype(np.float64)
    hi = np.take(a, i1, axis=axis).astype(np.float64)
    return lo * (1.0 - frac) + hi * frac


def resize(p, target: tuple[int, int], mode: str = "linear"):
    """Resize the last two axes (h, w) of a plane/array to ``target`` = (tx, ty).

    ``linear`` is corner-aligned bilinear; ``area`` averages each integer
    s x s source block. Returns the input type (Plane2D or float64 array).
    """
    tx, ty = target
    if tx <= 0 or ty <= 0:
        raise ValueError("resize target must be positive")
    a = p.values if isinstance(p, Plane2D) else _voxels(p)
    h, w = a.shape[-2:]
    if mode == "linear":
        out = resize_axis_linear(resize_axis_linear(a, ty, a.ndim - 2), tx, a.ndim - 1)
    elif mode == "area":
        if h % ty or w % tx:
            raise ValueError(f"area resize needs integer factors, got {h}x{w} -> {ty}x{tx}")
        sy, sx = h // ty, w // tx
        blocks = a.astype(np.float64).reshape(a.shape[:-2] + (ty, sy, tx, sx))
        out = blocks.mean(axis=(-3, -1))
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    if isinstance(p, Plane2D):
        return Plane2D(out, p.axis, p.index, dict(p.meta))
    return out


def bone_fraction_per_plane(v, bone_range) -> np.ndarray:
    r = _as_range(bone_range)
    vox = _voxels(v)
    inside = (vox >= r.lo) & (vox <= r.hi)
    return inside.reshape(vox.shape[0], -1).mean(axis=1)


def bone_extent_zrange(v, bone_range, frac_threshold: float = 0.03) -> tuple[int, int]:
    """First and last axial planes whose bone-range area fraction is >= threshold."""
    if not 0 < frac_threshold < 1:
        raise ValueError("frac_threshold must lie in (0, 1)")
    frac = bone_fraction_per_plane(v, bone_range)
    hits = np.flatnonzero(frac >= frac_threshold)
    if hits.size == 0:
        raise NoBoneError(f"no plane has bone fraction >= {frac_threshold}")
    return int(hits[0]), int(hits[-1])


def axial_displace_augment(
    v: Volume, ann: GppAnnotation, shift: int, background=(AIR_HU, 50.0), rng=None
) -> tuple[Volume, GppAnnotation]:
    """Shift planes by ``shift`` along z; vacated planes get Gaussian background.

    ``background`` is (mean, sigma) in HU.
    """
    nz = v.nz
    if abs(shift) >= nz:
        raise ValueError(f"|shift| must be < nz={nz}")
    new_gppi = ann.gppi + shift
    if not 0 <= new_gppi < nz:
        raise ValueError(f"shifted gppi {new_gppi} leaves [0, {nz})")
    if shift == 0:
        return v, ann
    rng = np.random.default_rng() if rng is None else rng
    mean, sigma = background
    out = np.empty(v.voxels.shape, dtype=np.float64)
    fill = slice(0, shift) if shift > 0 else slice(nz + shift, nz)
    out[fill] = rng.normal(mean, sigma, size=out[fill].shape)
    if shift > 0:
        out[shift:] = v.voxels[: nz - shift]
    else:
        out[: nz + shift] = v.voxels[-shift:]
    return Volume(v.id, out, v.spacing_um), replace(ann, gppi=new_gppi)


def _apply_geometric(a: np.ndarray, op: str, rng, sigma: float) -> np.ndarray:
    if op == "flip_h":
        return a[..., ::-1].copy()
    if op == "flip_v":
        return a[..., ::-1, :].copy()
    if op == "rot90":
        if a.shape[-1] != a.shape[-2]:
            raise ValueError("rot90 needs a square input")
        return np.rot90(a, 1, axes=(-2, -1)).copy()
    if op == "gauss_noise":
        if sigma == 0:
            return a.copy()
        rng = np.random.default_rng() if rng is None else rng
        return a + rng.normal(0.0, sigma, size=a.shape)
    raise ValueError(f"unknown augmentation {op!r}")


def geometric_augment(p, op: str, rng=None, sigma: float = 0.0):
    """In-plane flips, 90-degree rotation or additive Gaussian noise.

    Accepts a Plane2D, a ChannelStack or a bare array (last two axes spatial).
    Labels are untouched: in-plane ops do not move the growth plate plane.
    """
    if isinstance(p, Plane2D):
        return Plane2D(_apply_geometric(p.values, op, rng, sigma), p.axis, p.index, dict(p.meta))
    if isinstance(p, ChannelStack):
        return replace(p, channels=_apply_geometric(p.channels, op, rng, sigma))
    return _apply_geometric(np.asarray(p), op, rng, sigma)


def inner_window(n: int, inner_frac: float) -> tuple[int, int]:
    """Half-open index range covering the central ``inner_frac`` of ``n``."""
    width = max(1, int(round(n * inner_frac)))
    lo = (n - width) // 2
    return lo, lo + width


def build_channel_stack(
    v,
    scheme: str,
    gppi: int | None = None,
    *,
    c: int = 9,
    inner_frac: float = 0.5,
    rng=None,
    offsets=EK_OFFSETS,
) -> list[ChannelStack]:
    """2.5D long-axis inputs.

    ``mh_sorted_random``: one stack of ``c`` sorted random sagittal planes from
    the central ``inner_frac`` of the x extent. ``ek_views``: for every
    (sagittal, coronal) offset pair around the centre a 3-channel stack
    [sagittal, coronal, mean of both]. Each stack is labelled gppi / nz.
    """
    vox = _voxels(v)
    nz, ny, nx = vox.shape
    label = None if gppi is None else gppi / nz
    if scheme == "mh_sorted_random":
        if c < 1 or not 0 < inner_frac <= 1:
            raise ValueError("mh stacks need c >= 1 and 0 < inner_frac <= 1")
        lo, hi = inner_window(nx, inner_frac)
        if c > hi - lo:
            raise ValueError(f"c={c} exceeds the {hi - lo} planes in the inner window")
        rng = np.random.default_rng() if rng is None else rng
        idx = np.sort(rng.choice(np.arange(lo, hi), size=c, replace=False))
        chans = np.stack([vox[:, :, i] for i in idx]).astype(np.float32)
        return [ChannelStack(chans, tuple(int(i) for i in idx), "sagittal", label)]
    if scheme == "ek_views":
        if nx != ny:
            raise ValueError("ek views need a square xy extent; crop_or_pad_xy first")
        x0, y0 = nx // 2, ny // 2
        stacks = []
        for ox in offsets:
            for oy in offsets:
                sag = extract_plane(vox, "sagittal", x0 + ox).values.astype(np.float32)
                cor = extract_plane(vox, "coronal", y0 + oy).values.astype(np.float32)
                chans = np.stack([sag, cor, 0.5 * (sag + cor)])
                stacks.append(ChannelStack(chans, (x0 + ox, y0 + oy), "sagittal+coronal", label))
        return stacks
    raise ValueError(f"unknown stack scheme {scheme!r}")

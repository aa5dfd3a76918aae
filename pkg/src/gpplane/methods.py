"""Trainable detection pipelines, one per decoding family.

===========  ===============================================================
axial-close  per-plane before/after classifier, closing, last 'before' + 1
blob-refine  four-blob classifier for a rough plane, 51-plane stack regression
window-bm    linear-P window regression, stride-1 sliding window argmax
window-sn    objectness + offset window heads, strided sliding window
long-axis    sorted random sagittal planes, coarse-to-fine fraction regression
===========  ===============================================================

Every pipeline works on phantom-scale inputs: axial planes are area-reduced
to ``size`` x ``size`` before the network sees them. Network configs,
sampling and schedules live in ``DEFAULTS`` and can be overridden per call.
"""
from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field

import numpy as np

from gpplane import detect
from gpplane.detect import Detection
from gpplane.micronet import Dataset, MicroNet, MicroNetConfig, Schedule, train
from gpplane.prep import (
    axial_displace_augment,
    bone_extent_zrange,
    build_channel_stack,
    geometric_augment,
    normalize_unit,
    resize,
    resize_axis_linear,
)
from gpplane.volgrid import GppAnnotation, Volume

METHODS = ("axial-close", "blob-refine", "window-bm", "window-sn", "long-axis")


def _stages(channels, hidden=0, head="binary_classifier", units=1):
    layers: list[dict] = []
    for ch in channels:
        layers += [{"type": "conv", "k": 3, "out": ch}, {"type": "relu"}, {"type": "maxpool", "k": 2}]
    layers.append({"type": "flatten"})
    if hidden:
        layers += [{"type": "dense", "out": hidden}, {"type": "relu"}]
    layers.append({"type": "dense", "out": units})
    return layers


DEFAULTS: dict[str, dict] = {
    "axial-close": {
        "clip": [0, 1900],
        "size": 32,
        "kernel": 5,
        "extent_range": [500, 3000],
        "extent_threshold": 0.03,
        "channels": [8, 16, 16],
        "near": 12,
        "per_volume": 40,
        "epochs": 10,
        "lr": 2e-3,
        "batch": 32,
        "decay": 1e-4,
    },
    "blob-refine": {
        "clip": [-1000, 3000],
        "size": 24,
        "half_span": 25,
        "blob_threshold": 100.0,
        "channels": [8, 16, 16],
        "reg_channels": [8, 16, 16],
        "reg_hidden": 16,
        "near": 12,
        "per_volume": 40,
        "reg_jitter": 6,
        "epochs": 10,
        "reg_epochs": 30,
        "lr": 2e-3,
        "batch": 32,
        "decay": 1e-4,
    },
    "window-bm": {
        "clip": [-100, 3171],
        "size": 24,
        "window": 32,
        "stride": 1,
        "channels": [8, 16, 16],
        "hidden": 0,
        "per_volume": 24,
        "epochs": 30,
        "lr": 2e-3,
        "batch": 32,
        "decay": 1e-4,
    },
    "window-sn": {
        "clip": [-1000, 4000],
        "size": 24,
        "window": 32,
        "stride": 16,
        "channels": [8, 16, 16],
        "hidden": 0,
        "per_volume": 24,
        "epochs": 30,
        "lr": 2e-3,
        "batch": 32,
        "decay": 1e-4,
        "lam": 6.0,
        "alpha": 0.25,
        "gamma": 2.0,
    },
    "long-axis": {
        "clip": [-1000, 3000],
        "width": 24,
        "crop_len": 64,
        "c": 9,
        "inner_frac": 0.5,
        "draws": 3,
        "channels": [8, 16, 16],
        "hidden": 0,
        "crops_per_volume": 8,
        "interp_per_volume": 8,
        "separate_coarse": True,
        "max_shift": 40,
        "epochs": 30,
        "lr": 2e-3,
        "batch": 32,
        "decay": 1e-4,
    },
}


def default_params(method: str) -> dict:
    if method not in DEFAULTS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return copy.deepcopy(DEFAULTS[method])


def merged_params(method: str, overrides: dict | None) -> dict:
    params = default_params(method)
    for key, value in (overrides or {}).items():
        if key not in params:
            raise KeyError(f"unknown parameter {key!r} for method {method}")
        params[key] = value
    return params


@dataclass
class ModelBundle:
    """Trained nets of one method plus the parameters they were trained with."""

    method: str
    params: dict
    nets: dict[str, MicroNet] = field(default_factory=dict)

    def to_records(self) -> list[tuple[MicroNet, dict]]:
        return [(net, {"method": self.method, "role": role, "params": self.params}) for role, net in sorted(self.nets.items())]

    @classmethod
    def from_records(cls, records) -> "ModelBundle":
        if not records:
            raise ValueError("model file holds no networks")
        method = records[0][1]["method"]
        params = records[0][1]["params"]
        nets = {meta["role"]: net for net, meta in records}
        return cls(method, params, nets)


def volume_seed(volume_id: str, salt: str = "") -> int:
    """Stable per-volume seed from its id."""
    return int.from_bytes(hashlib.sha256(f"{salt}:{volume_id}".encode()).digest()[:4], "little")


def prepare_axial(vol, clip, size: int) -> np.ndarray:
    """Normalise to [0, 1] and reduce every axial plane to size x size, float32 (nz, size, size)."""
    unit = normalize_unit(vol, clip)
    ny, nx = unit.shape[1:]
    mode = "area" if ny % size == 0 and nx % size == 0 else "linear"
    return resize(unit, (size, size), mode).astype(np.float32)


def _flip_rot(xb: np.ndarray, rng) -> np.ndarray:
    """Random left/right flip and 90-degree rotation per sample (square inputs)."""
    out = xb.copy()
    for i in range(len(out)):
        if rng.random() < 0.5:
            out[i] = geometric_augment(out[i], "flip_h")
        if out.shape[-1] == out.shape[-2]:
            k = int(rng.integers(4))
            for _ in range(k):
                out[i] = geometric_augment(out[i], "rot90")
    return out


def _flip_only(xb: np.ndarray, rng) -> np.ndarray:
    out = xb.copy()
    flip = rng.random(len(out)) < 0.5
    out[flip] = out[flip][..., ::-1]
    return out


def _schedule(p: dict, seed: int, epochs_key: str = "epochs") -> Schedule:
    epochs = p[epochs_key]
    # step the rate down for the final third, as in the two-segment recipes
    return Schedule(epochs, [(0, p["lr"]), (max(1, (2 * epochs) // 3), p["lr"] / 4)], p["batch"], seed, p["decay"])


def _plane_samples(nz: int, gppi: int, near: int, per_volume: int, rng) -> np.ndarray:
    """Half the planes from the neighbourhood of the boundary, half anywhere."""
    k_near = per_volume // 2
    lo, hi = max(0, gppi - near), min(nz, gppi + near + 1)
    near_idx = rng.integers(lo, hi, size=k_near)
    far_idx = rng.integers(0, nz, size=per_volume - k_near)
    return np.concatenate([near_idx, far_idx])


# axial-close


def _axial_close_train(samples, p, seed) -> dict[str, MicroNet]:
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for vol, gppi in samples:
        planes = prepare_axial(vol, p["clip"], p["size"])
        idx = _plane_samples(len(planes), gppi, p["near"], p["per_volume"], rng)
        xs.append(planes[idx])
        ys.append((idx < gppi).astype(np.float64))
    ds = Dataset(np.concatenate(xs)[:, None], np.concatenate(ys))
    cfg = MicroNetConfig((p["size"], p["size"], 1), _stages(p["channels"]), "binary_classifier", name="before-classifier")
    net = MicroNet(cfg, seed=seed)
    train(net, ds, _schedule(p, seed), loss="ce", augment=_flip_rot)
    return {"classifier": net}


def _axial_close_detect(bundle: ModelBundle, vol: Volume) -> Detection:
    p = bundle.params
    planes = prepare_axial(vol, p["clip"], p["size"])
    try:
        z0, z1 = bone_extent_zrange(vol, p["extent_range"], p["extent_threshold"])
    except ValueError:
        z0, z1 = 0, len(planes) - 1
    probs = np.zeros(len(planes))
    probs[z0 : z1 + 1] = bundle.nets["classifier"].predict(planes[z0 : z1 + 1, None])
    probs[:z0] = 1.0  # planes below the bone extent precede the plate
    diag = {"probs": probs.tolist(), "extent": [z0, z1]}
    try:
        gppi, _ = detect.axial_close_decode(probs, p["kernel"])
    except detect.DetectionError:
        # nothing classified as 'before': fall back to the start of the bone
        return Detection(vol.id, z0, "axial-close", diag, ("no_before_plane",))
    return Detection(vol.id, min(gppi, len(planes) - 1), "axial-close", diag)


# blob-refine


def four_blob_labels(vol: Volume, threshold: float) -> np.ndarray:
    """1 where an axial plane shows exactly four 4-connected blobs."""
    return np.array([detect.count_blobs(plane, threshold) == 4 for plane in vol.voxels], dtype=np.float64)


def _reg_target(gppi: int, start: int, half_span: int) -> float:
    return (gppi - start) / (2 * half_span)


def _blob_refine_train(samples, p, seed) -> dict[str, MicroNet]:
    rng = np.random.default_rng(seed)
    xs, ys, rx, ry = [], [], [], []
    h = p["half_span"]
    for vol, gppi in samples:
        planes = prepare_axial(vol, p["clip"], p["size"])
        labels = four_blob_labels(vol, p["blob_threshold"])
        idx = _plane_samples(len(planes), gppi, p["near"], p["per_volume"], rng)
        xs.append(planes[idx])
        ys.append(labels[idx])
        for delta in range(-p["reg_jitter"], p["reg_jitter"] + 1):
            stack, start, _ = detect.refine_stack(planes, gppi - 1 + delta, h)
            rx.append(stack)
            ry.append(_reg_target(gppi, start, h))
    cls_cfg = MicroNetConfig((p["size"], p["size"], 1), _stages(p["channels"]), "binary_classifier", name="four-blob-classifier")
    cls_net = MicroNet(cls_cfg, seed=seed)
    train(cls_net, Dataset(np.concatenate(xs)[:, None], np.concatenate(ys)), _schedule(p, seed), loss="ce", augment=_flip_rot)
    depth = 2 * h + 1
    reg_cfg = MicroNetConfig(
        (p["size"], p["size"], depth),
        _stages(p["reg_channels"], p["reg_hidden"]),
        "fraction_regressor",
        name="stack-regressor",
    )
    reg_net = MicroNet(reg_cfg, seed=seed + 1)
    train(reg_net, Dataset(np.stack(rx), np.array(ry)), _schedule(p, seed + 1, "reg_epochs"), loss="mse", augment=_flip_rot)
    return {"classifier": cls_net, "regressor": reg_net}


def _blob_refine_detect(bundle: ModelBundle, vol: Volume) -> Detection:
    p = bundle.params
    planes = prepare_axial(vol, p["clip"], p["size"])
    cls, reg = bundle.nets["classifier"].predict, bundle.nets["regressor"].predict
    try:
        return detect.blob_rough_then_refine(planes, cls, reg, p["half_span"], vol.id)
    except detect.DetectionError:
        # no confident four-blob plane: centre the refinement on the most likely one
        probs = cls(planes[:, None])
        best = np.flatnonzero(probs == probs.max())[-1]
        det = detect.blob_rough_then_refine(planes, lambda x: probs >= probs[best], reg, p["half_span"], vol.id)
        det.flags = det.flags + ("no_four_blob_plane",)
        return det


# window-bm / window-sn


def _window_samples(nz: int, gppi: int, L: int, per_volume: int, rng) -> np.ndarray:
    k_in = per_volume // 2
    lo, hi = max(0, gppi - L + 1), min(gppi, nz - L)
    inside = rng.integers(lo, hi + 1, size=k_in)
    anywhere = rng.integers(0, nz - L + 1, size=per_volume - k_in)
    return np.concatenate([inside, anywhere])


def _window_train(samples, p, seed, scheme: str) -> dict[str, MicroNet]:
    rng = np.random.default_rng(seed)
    L = p["window"]
    xs, ys, ms = [], [], []
    for vol, gppi in samples:
        planes = prepare_axial(vol, p["clip"], p["size"])
        for s in _window_samples(len(planes), gppi, L, p["per_volume"], rng):
            t = detect.encode_window_targets(gppi, int(s), L, scheme)
            xs.append(planes[s : s + L])
            if scheme == "bm":
                ys.append(t.p_linear)
            else:
                ys.append([t.contains, t.offset_frac if t.contains else 0.0])
                ms.append(t.contains)
    head, units = ("fraction_regressor", 1) if scheme == "bm" else ("objectness_offset", 2)
    cfg = MicroNetConfig((p["size"], p["size"], L), _stages(p["channels"], p["hidden"], units=units), head, name=f"window-{scheme}")
    net = MicroNet(cfg, seed=seed)
    if scheme == "bm":
        ds = Dataset(np.stack(xs), np.array(ys))
        train(net, ds, _schedule(p, seed), loss="bce", augment=_flip_rot)
    else:
        ds = Dataset(np.stack(xs), np.array(ys), np.array(ms, dtype=np.float64))
        kw = {"lam": p["lam"], "alpha": p["alpha"], "gamma": p["gamma"]}
        train(net, ds, _schedule(p, seed), loss="sn_combined", augment=_flip_rot, loss_kwargs=kw)
    return {"window": net}


def _window_detect(bundle: ModelBundle, vol: Volume, scheme: str) -> Detection:
    p = bundle.params
    planes = prepare_axial(vol, p["clip"], p["size"])
    net = bundle.nets["window"]
    det = detect.sliding_window_detect(planes, lambda w, s: net.predict(w), p["window"], p["stride"], scheme, vol.id)
    det.method = f"window-{scheme}"
    return det


# long-axis


def _sagittal_stack(vol, p, rng) -> np.ndarray:
    """(c, nz, width) normalised stack of sorted random central sagittal planes."""
    st = build_channel_stack(vol, "mh_sorted_random", c=p["c"], inner_frac=p["inner_frac"], rng=rng)[0]
    unit = normalize_unit(st.channels, p["clip"])
    nz, ny = unit.shape[1:]
    w = p["width"]
    mode = "area" if ny % w == 0 else "linear"
    return resize(unit, (w, nz), mode).astype(np.float32)


def _long_axis_train(samples, p, seed) -> dict[str, MicroNet]:
    rng = np.random.default_rng(seed)
    L = p["crop_len"]
    coarse_x, coarse_y, fine_x, fine_y = [], [], [], []
    air = p["clip"][0]
    for vol, gppi in samples:
        nz = vol.nz
        for _ in range(p["interp_per_volume"]):
            lo, hi = max(-p["max_shift"], -gppi), min(p["max_shift"], nz - 1 - gppi)
            shift = int(rng.integers(lo, hi + 1))
            shifted, ann = axial_displace_augment(vol, GppAnnotation(vol.id, gppi), shift, (air, 50.0), rng)
            st = _sagittal_stack(shifted, p, rng)
            coarse_x.append(resize_axis_linear(st, L, axis=1).astype(np.float32))
            coarse_y.append(ann.gppi / nz)
        st = _sagittal_stack(vol, p, rng)
        for _ in range(p["crops_per_volume"]):
            start = int(rng.integers(max(0, gppi - L + 1), min(gppi, nz - L) + 1))
            fine_x.append(st[:, start : start + L])
            fine_y.append((gppi - start) / L)

    def fit(xs, ys, name, net_seed):
        cfg = MicroNetConfig((L, p["width"], p["c"]), _stages(p["channels"], p["hidden"]), "fraction_regressor", name=name)
        net = MicroNet(cfg, seed=net_seed)
        train(net, Dataset(np.stack(xs), np.array(ys)), _schedule(p, net_seed), loss="mse", augment=_flip_only)
        return net

    if p["separate_coarse"]:
        return {
            "coarse": fit(coarse_x, coarse_y, "long-axis-coarse", seed),
            "regressor": fit(fine_x, fine_y, "long-axis-fine", seed + 1),
        }
    return {"regressor": fit(coarse_x + fine_x, coarse_y + fine_y, "long-axis-regressor", seed)}


def _long_axis_detect(bundle: ModelBundle, vol: Volume) -> Detection:
    p = bundle.params
    fine = bundle.nets["regressor"]
    coarse = bundle.nets.get("coarse", fine)
    rng = np.random.default_rng(volume_seed(vol.id, "long-axis"))
    dets = [
        detect.coarse_to_fine_regress(_sagittal_stack(vol, p, rng), coarse.predict, p["crop_len"], vol.id, fine.predict)
        for _ in range(p["draws"])
    ]
    gppi = detect.ensemble_predictions([d.gppi_pred for d in dets])
    return Detection(vol.id, gppi, "long-axis", {"draws": [d.diagnostics for d in dets]})


_TRAIN = {
    "axial-close": _axial_close_train,
    "blob-refine": _blob_refine_train,
    "window-bm": lambda s, p, seed: _window_train(s, p, seed, "bm"),
    "window-sn": lambda s, p, seed: _window_train(s, p, seed, "sn"),
    "long-axis": _long_axis_train,
}
_DETECT = {
    "axial-close": _axial_close_detect,
    "blob-refine": _blob_refine_detect,
    "window-bm": lambda b, v: _window_detect(b, v, "bm"),
    "window-sn": lambda b, v: _window_detect(b, v, "sn"),
    "long-axis": _long_axis_detect,
}


def train_method(method: str, samples: list[tuple[Volume, int]], params: dict | None = None, seed: int = 0) -> ModelBundle:
    """Train every network of ``method`` on (volume, gppi) pairs."""
    if not samples:
        raise ValueError("no training volumes")
    p = merged_params(method, params)
    nets = _TRAIN[method](samples, p, seed)
    return ModelBundle(method, p, nets)


def detect_volume(bundle: ModelBundle, vol: Volume) -> Detection:
    return _DETECT[bundle.method](bundle, vol)


def ensemble_detect(bundles: list[ModelBundle], vol: Volume) -> Detection:
    """Rounded mean of the member predictions (e.g. one model per fold)."""
    members = [detect_volume(b, vol) for b in bundles]
    gppi = detect.ensemble_predictions([d.gppi_pred for d in members])
    methods = sorted({d.method for d in members})
    return Detection(vol.id, gppi, "ensemble:" + "+".join(methods), {"members": [d.gppi_pred for d in members]})


def bundles_to_records(bundles: list[ModelBundle]) -> list[tuple[MicroNet, dict]]:
    """Flatten fold bundles into model-file records; a lone bundle carries no fold tag."""
    if len(bundles) == 1:
        return bundles[0].to_records()
    records = []
    for fold, bundle in enumerate(bundles):
        records += [(net, dict(meta, fold=fold)) for net, meta in bundle.to_records()]
    return records


def records_to_bundles(records) -> list[ModelBundle]:
    groups: dict[int, list] = {}
    for net, meta in records:
        groups.setdefault(meta.get("fold", 0), []).append((net, meta))
    return [ModelBundle.from_records(groups[f]) for f in sorted(groups)]

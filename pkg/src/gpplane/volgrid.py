"""Volume container, plane extraction and the GPV file format.

A GPV volume is a pair of files: ``<name>.json`` (metadata sidecar) and
``<name>.raw`` (little-endian int16 voxels, z-major then row-major). Plane
indices are 0-based everywhere; the sidecar records this in ``index_base``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AXES = ("axial", "sagittal", "coronal")
DEFAULT_SPACING_UM = (10.0, 10.0, 10.0)


class VolumeFormatError(ValueError):
    """Raised for a missing, corrupt or inconsistent GPV file pair."""


@dataclass(frozen=True)
class Volume:
    """A micro-CT scan; ``voxels`` has shape (nz, ny, nx) and z is the long axis."""

    id: str
    voxels: np.ndarray
    spacing_um: tuple[float, float, float] = DEFAULT_SPACING_UM

    def __post_init__(self):
        vox = np.asarray(self.voxels)
        if vox.ndim != 3 or min(vox.shape) <= 0:
            raise ValueError(f"voxels must be a non-empty 3D array, got shape {vox.shape}")
        if vox.dtype != np.int16:
            if np.issubdtype(vox.dtype, np.floating):
                vox = np.rint(vox)
            vox = np.clip(vox, -32768, 32767).astype(np.int16)
        else:
            vox = vox.copy()
        vox.setflags(write=False)
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "spacing_um", tuple(float(s) for s in self.spacing_um))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.voxels.shape
        return nx, ny, nz

    @property
    def nz(self) -> int:
        return self.voxels.shape[0]


@dataclass(frozen=True)
class GppAnnotation:
    volume_id: str
    gppi: int
    source: str = "truth"

    def check(self, volume: Volume) -> None:
        if not 0 <= self.gppi < volume.nz:
            raise ValueError(f"gppi {self.gppi} outside [0, {volume.nz}) for {volume.id}")


@dataclass(frozen=True)
class Plane2D:
    values: np.ndarray
    axis: str
    index: int
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _voxels(v) -> np.ndarray:
    return v.voxels if isinstance(v, Volume) else np.asarray(v)


def _axis_extent(shape: tuple[int, int, int], axis: str) -> int:
    nz, ny, nx = shape
    return {"axial": nz, "sagittal": nx, "coronal": ny}[axis]


def extract_plane(v, axis: str, index: int) -> Plane2D:
    """Copy one plane out of a volume.

    axial -> (ny, nx) at z=index; sagittal -> (nz, ny) at x=index;
    coronal -> (nz, nx) at y=index. Accepts a Volume or a (nz, ny, nx) array.
    """
    vox = _voxels(v)
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}; expected one of {AXES}")
    extent = _axis_extent(vox.shape, axis)
    if not 0 <= index < extent:
        raise IndexError(f"{axis} index {index} outside [0, {extent})")
    if axis == "axial":
        values = vox[index]
    elif axis == "sagittal":
        values = vox[:, :, index]
    else:
        values = vox[:, index, :]
    return Plane2D(np.array(values, copy=True), axis, int(index))


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".raw")


def sidecar_dict(v: Volume, gppi: int | None = None) -> dict:
    nx, ny, nz = v.dims
    meta = {
        "id": v.id,
        "nx": nx,
        "ny": ny,
        "nz": nz,
        "spacing_um": list(v.spacing_um),
        "dtype": "i16le",
        "order": "zyx",
        "index_base": 0,
    }
    if gppi is not None:
        meta["gppi"] = int(gppi)
    return meta


def save_volume(v: Volume, path, gppi: int | None = None) -> tuple[Path, Path]:
    """Write ``<path>.json`` + ``<path>.raw``; output bytes depend only on the inputs."""
    meta_path, raw_path = _paths(path)
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    meta_path.write_text(json.dumps(sidecar_dict(v, gppi), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    raw_path.write_bytes(v.voxels.astype("<i2", copy=False).tobytes(order="C"))
    return meta_path, raw_path


def read_sidecar(path) -> dict:
    meta_path, _ = _paths(path)
    if not meta_path.exists():
        raise VolumeFormatError(f"missing sidecar {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"corrupt sidecar {meta_path}: {exc}") from None
    for key in ("id", "nx", "ny", "nz"):
        if key not in meta:
            raise VolumeFormatError(f"sidecar {meta_path} lacks {key!r}")
    if meta.get("dtype", "i16le") != "i16le" or meta.get("order", "zyx") != "zyx":
        raise VolumeFormatError(f"unsupported dtype/order in {meta_path}")
    if meta.get("index_base", 0) != 0:
        raise VolumeFormatError("only 0-based plane indices are supported")
    for key in ("nx", "ny", "nz"):
        if not isinstance(meta[key], int) or meta[key] <= 0:
            raise VolumeFormatError(f"{key} must be a positive integer, got {meta[key]!r}")
    return meta


def load_volume(path) -> Volume:
    """Load a GPV pair; ``path`` may name the stem, the .json or the .raw file."""
    meta = read_sidecar(path)
    _, raw_path = _paths(path)
    if not raw_path.exists():
        raise VolumeFormatError(f"missing payload {raw_path}")
    nx, ny, nz = meta["nx"], meta["ny"], meta["nz"]
    payload = raw_path.read_bytes()
    expected = nx * ny * nz * 2
    if len(payload) != expected:
        raise VolumeFormatError(
            f"payload {raw_path} has {len(payload)} bytes, dims {nx}x{ny}x{nz} need {expected}"
        )
    vox = np.frombuffer(payload, dtype="<i2").reshape(nz, ny, nx).astype(np.int16)
    spacing = tuple(meta.get("spacing_um", DEFAULT_SPACING_UM))
    return Volume(meta["id"], vox, spacing)


def load_annotation(path) -> GppAnnotation | None:
    meta = read_sidecar(path)
    if meta.get("gppi") is None:
        return None
    return GppAnnotation(meta["id"], int(meta["gppi"]), "sidecar")


def list_volumes(directory) -> list[Path]:
    """Stems of all GPV pairs in a directory, sorted by name."""
    d = Path(directory)
    return sorted(p.with_suffix("") for p in d.glob("*.json") if p.with_suffix(".raw").exists())

"""Synthetic femur phantoms with a known growth plate plane.

Along z the phantom runs: shaft disk, then four protrusion disks for
``protrusion_span`` planes, then (from ``gppi`` to the end) the four disks
joined by a diagonal bridging cross into a single component. Planes grow
from the protrusion side toward the merged side, so the growth plate plane
is the first merged plane.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from gpplane.volgrid import GppAnnotation, Volume, save_volume

STUDIES = ("A", "B", "C")


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (96, 96, 192)
    gppi: int = 100
    protrusion_radius_vox: float = 8.0
    protrusion_span: int = 40
    shaft_radius_vox: float = 26.0
    bone_hu: int = 1200
    air_hu: int = -1000
    noise_sigma: float = 80.0
    seed: int = 0
    protrusion_offset_vox: float = 16.0
    bridge_halfwidth_vox: float = 3.0

    def validate(self) -> None:
        nx, ny, nz = self.dims
        if min(self.dims) <= 0:
            raise ValueError("dims must be positive")
        if not self.protrusion_span < self.gppi < nz:
            raise ValueError(f"need protrusion_span < gppi < nz, got {self.protrusion_span}, {self.gppi}, {nz}")
        r, d = self.protrusion_radius_vox, self.protrusion_offset_vox
        if r <= 0 or self.shaft_radius_vox <= 0:
            raise ValueError("radii must be positive")
        # disks must stay separated by background under 4-connectivity
        if 2 * d - 2 * r < 2:
            raise ValueError("protrusion disks overlap; increase offset or shrink radius")
        margin = d + r + 1
        if margin > min(nx, ny) / 2 or self.shaft_radius_vox + 1 > min(nx, ny) / 2:
            raise ValueError("protrusions or shaft do not fit inside the xy extent")
        if self.bone_hu <= self.air_hu:
            raise ValueError("bone_hu must exceed air_hu")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def threshold_hu(self) -> float:
        return (self.bone_hu + self.air_hu) / 2.0


def _masks(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    nx, ny, _ = spec.dims
    cy, cx = (ny - 1) / 2.0, (nx - 1) / 2.0
    y, x = np.mgrid[0:ny, 0:nx].astype(np.float64)
    dy, dx = y - cy, x - cx
    shaft = dy**2 + dx**2 <= spec.shaft_radius_vox**2
    d, r = spec.protrusion_offset_vox, spec.protrusion_radius_vox
    four = np.zeros((ny, nx), dtype=bool)
    for sy in (-1, 1):
        for sx in (-1, 1):
            four |= (dy - sy * d) ** 2 + (dx - sx * d) ** 2 <= r**2
    # X-shaped bridge along both diagonals between the disk centres
    w = spec.bridge_halfwidth_vox
    within = (np.abs(dy) <= d) & (np.abs(dx) <= d)
    diag = (np.abs(dy - dx) / math.sqrt(2) <= w) | (np.abs(dy + dx) / math.sqrt(2) <= w)
    merged = four | (within & diag)
    return shaft, four, merged


def phantom_region(spec: PhantomSpec, k: int) -> str:
    if k < spec.gppi - spec.protrusion_span:
        return "shaft"
    if k < spec.gppi:
        return "protrusion"
    return "merged"


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, GppAnnotation]:
    spec.validate()
    nx, ny, nz = spec.dims
    shaft, four, merged = _masks(spec)
    start = spec.gppi - spec.protrusion_span
    bone = np.empty((nz, ny, nx), dtype=bool)
    bone[:start] = shaft
    bone[start : spec.gppi] = four
    bone[spec.gppi :] = merged
    vox = np.where(bone, float(spec.bone_hu), float(spec.air_hu))
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        vox = vox + rng.normal(0.0, spec.noise_sigma, size=vox.shape)
    vid = f"phantom-s{spec.seed}"
    return Volume(vid, vox), GppAnnotation(vid, spec.gppi, "phantom")


@dataclass(frozen=True)
class Jitter:
    """Half-widths of the uniform jitter applied per phantom."""

    gppi: int = 15
    protrusion_radius_vox: float = 1.0
    shaft_radius_vox: float = 2.0


@dataclass(frozen=True)
class PhantomItem:
    volume: Volume
    annotation: GppAnnotation
    study: str


def generate_dataset(
    n: int, base: PhantomSpec = PhantomSpec(), jitter: Jitter = Jitter(), master_seed: int = 0
) -> list[PhantomItem]:
    """``n`` jittered phantoms; per-item seeds and jitter come from ``master_seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seq = np.random.SeedSequence(master_seed)
    items = []
    for i, child in enumerate(seq.spawn(n)):
        rng = np.random.default_rng(child)
        gppi = base.gppi + int(rng.integers(-jitter.gppi, jitter.gppi + 1))
        pr = base.protrusion_radius_vox + rng.uniform(-1, 1) * jitter.protrusion_radius_vox
        sr = base.shaft_radius_vox + rng.uniform(-1, 1) * jitter.shaft_radius_vox
        seed = int(rng.integers(0, 2**31 - 1))
        spec = replace(base, gppi=gppi, protrusion_radius_vox=pr, shaft_radius_vox=sr, seed=seed)
        vol, ann = generate_phantom(spec)
        vid = f"ph{master_seed}-{i:04d}"
        items.append(
            PhantomItem(Volume(vid, vol.voxels, vol.spacing_um), GppAnnotation(vid, ann.gppi, "phantom"), STUDIES[i % 3])
        )
    return items


def write_truth_csv(rows, path) -> None:
    """Write (volume_id, gppi, study) rows sorted by volume_id."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["volume_id", "gppi", "study"])
        for vid, gppi, study in sorted(rows):
            w.writerow([vid, int(gppi), study])


def read_truth_csv(path) -> dict[str, tuple[int, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not {"volume_id", "gppi"} <= set(rows[0]):
        raise ValueError(f"{path}: truth CSV needs volume_id and gppi columns")
    out = {}
    for r in rows:
        if r["volume_id"] in out:
            raise ValueError(f"{path}: duplicate volume_id {r['volume_id']}")
        out[r["volume_id"]] = (int(r["gppi"]), r.get("study") or "")
    return out


def write_dataset(items: list[PhantomItem], out_dir) -> list[Path]:
    """GPV pairs (gppi in the sidecar) plus ``truth.csv``; returns written paths."""
    out_dir = Path(out_dir)
    written = []
    for it in items:
        written.extend(save_volume(it.volume, out_dir / it.volume.id, gppi=it.annotation.gppi))
    truth = out_dir / "truth.csv"
    write_truth_csv([(it.volume.id, it.annotation.gppi, it.study) for it in items], truth)
    written.append(truth)
    return written

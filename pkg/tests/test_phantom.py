from __future__ import annotations

import hashlib
from dataclasses import replace

import numpy as np
import pytest

from gpplane.detect import count_blobs
from gpplane.phantom import (
    Jitter,
    PhantomSpec,
    generate_dataset,
    generate_phantom,
    phantom_region,
    read_truth_csv,
    write_dataset,
    write_truth_csv,
)
from gpplane.volgrid import list_volumes, load_annotation, load_volume

SMALL = PhantomSpec(
    dims=(48, 48, 96),
    gppi=50,
    protrusion_span=20,
    protrusion_radius_vox=4.0,
    protrusion_offset_vox=8.0,
    shaft_radius_vox=13.0,
    bridge_halfwidth_vox=1.5,
)


def _digest(v) -> str:
    return hashlib.sha256(v.voxels.tobytes()).hexdigest()


@pytest.mark.parametrize("spec", [PhantomSpec(noise_sigma=0), replace(SMALL, noise_sigma=0)])
def test_components_by_region_noiseless(spec):
    v, ann = generate_phantom(spec)
    thr = spec.threshold_hu
    expected = {"shaft": 1, "protrusion": 4, "merged": 1}
    for k in range(spec.dims[2]):
        assert count_blobs(v.voxels[k], thr) == expected[phantom_region(spec, k)], k
    assert count_blobs(v.voxels[ann.gppi], thr) == 1
    assert count_blobs(v.voxels[ann.gppi - 1], thr) == 4


def test_default_noise_keeps_blob_hook():
    spec = PhantomSpec()
    v, ann = generate_phantom(spec)
    for k in range(spec.gppi - spec.protrusion_span, spec.gppi):
        assert count_blobs(v.voxels[k], spec.threshold_hu) == 4
    assert count_blobs(v.voxels[spec.gppi], spec.threshold_hu) != 4


def test_generation_is_deterministic():
    a, _ = generate_phantom(SMALL)
    b, _ = generate_phantom(SMALL)
    assert _digest(a) == _digest(b)
    c, _ = generate_phantom(replace(SMALL, seed=1))
    assert _digest(a) != _digest(c)


@pytest.mark.parametrize(
    "change",
    [{"gppi": 10}, {"gppi": 96}, {"protrusion_offset_vox": 4.0}, {"shaft_radius_vox": 30.0}, {"bone_hu": -2000}],
)
def test_invalid_specs(change):
    with pytest.raises(ValueError):
        generate_phantom(replace(SMALL, **change))


def test_dataset_cardinality_ranges_and_determinism():
    base = replace(SMALL, dims=(48, 48, 240), gppi=160)
    items = generate_dataset(10, base, Jitter(gppi=15), master_seed=4)
    assert len({it.volume.id for it in items}) == 10
    assert all(145 <= it.annotation.gppi <= 175 for it in items)
    assert all(it.annotation.volume_id == it.volume.id for it in items)
    again = generate_dataset(10, base, Jitter(gppi=15), master_seed=4)
    assert [_digest(a.volume) for a in items] == [_digest(b.volume) for b in again]
    assert [it.study for it in items[:4]] == ["A", "B", "C", "A"]


def test_write_dataset_and_truth(tmp_path):
    items = generate_dataset(3, SMALL, Jitter(gppi=3), master_seed=1)
    written = write_dataset(items, tmp_path)
    assert len(written) == 7
    assert len(list_volumes(tmp_path)) == 3
    truth = read_truth_csv(tmp_path / "truth.csv")
    for it in items:
        assert truth[it.volume.id] == (it.annotation.gppi, it.study)
        stem = tmp_path / it.volume.id
        assert load_annotation(stem).gppi == it.annotation.gppi
        assert np.array_equal(load_volume(stem).voxels, it.volume.voxels)
    assert (tmp_path / "truth.csv").read_bytes().startswith(b"volume_id,gppi,study\n")


def test_truth_csv_rejects_duplicates(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("volume_id,gppi,study\na,1,A\na,2,A\n")
    with pytest.raises(ValueError):
        read_truth_csv(p)
    write_truth_csv([("b", 2, "B"), ("a", 1, "A")], p)
    assert p.read_text().splitlines()[1:] == ["a,1,A", "b,2,B"]

"""Plumbing of the trainable pipelines on a handful of phantoms, with tiny schedules."""
from __future__ import annotations

import numpy as np
import pytest

from gpplane import methods
from gpplane.experiment import cross_validate
from gpplane.micronet.modelio import dumps_model, loads_model
from gpplane.phantom import generate_dataset

FAST = {
    "axial-close": {"epochs": 1, "per_volume": 8},
    "blob-refine": {"epochs": 1, "reg_epochs": 1, "per_volume": 8, "reg_jitter": 1},
    "window-bm": {"epochs": 1, "per_volume": 4},
    "window-sn": {"epochs": 1, "per_volume": 4},
    "long-axis": {"epochs": 1, "crops_per_volume": 2, "interp_per_volume": 1, "draws": 1},
}


@pytest.fixture(scope="module")
def phantoms():
    return generate_dataset(4, master_seed=3)


@pytest.fixture(scope="module")
def bundles(phantoms):
    samples = [(it.volume, it.annotation.gppi) for it in phantoms[:3]]
    return {m: methods.train_method(m, samples, FAST[m], seed=1) for m in methods.METHODS}


@pytest.mark.parametrize("method", methods.METHODS)
def test_train_and_detect(bundles, phantoms, method):
    vol = phantoms[3].volume
    det = methods.detect_volume(bundles[method], vol)
    assert det.volume_id == vol.id
    assert 0 <= det.gppi_pred < vol.nz
    assert det.method == method


@pytest.mark.parametrize("method", methods.METHODS)
def test_bundle_survives_model_file(bundles, phantoms, method):
    b = bundles[method]
    again = methods.records_to_bundles(loads_model(dumps_model(methods.bundles_to_records([b]))))
    assert len(again) == 1 and again[0].method == method and again[0].params == b.params
    vol = phantoms[3].volume
    assert methods.detect_volume(again[0], vol).gppi_pred == methods.detect_volume(b, vol).gppi_pred


def test_training_is_deterministic(phantoms):
    samples = [(it.volume, it.annotation.gppi) for it in phantoms[:2]]
    a = methods.train_method("window-bm", samples, FAST["window-bm"], seed=5)
    b = methods.train_method("window-bm", samples, FAST["window-bm"], seed=5)
    assert dumps_model(a.to_records()) == dumps_model(b.to_records())


def test_fold_records_group_back(bundles):
    recs = methods.bundles_to_records([bundles["axial-close"], bundles["axial-close"]])
    assert [m["fold"] for _, m in recs] == [0, 1]
    assert len(methods.records_to_bundles(recs)) == 2


def test_ensemble_detect(bundles, phantoms):
    vol = phantoms[3].volume
    members = [bundles["axial-close"], bundles["window-bm"]]
    det = methods.ensemble_detect(members, vol)
    preds = [methods.detect_volume(b, vol).gppi_pred for b in members]
    assert det.diagnostics["members"] == preds
    assert abs(det.gppi_pred - np.mean(preds)) <= 0.5


def test_param_validation():
    with pytest.raises(KeyError):
        methods.merged_params("window-bm", {"windw": 3})
    with pytest.raises(ValueError):
        methods.default_params("hough")
    with pytest.raises(ValueError):
        methods.train_method("window-bm", [])


def test_four_blob_labels_match_phantom_regions(phantoms):
    it = phantoms[0]
    labels = methods.four_blob_labels(it.volume, 100.0)
    g = it.annotation.gppi
    assert labels[g - 1] == 1 and labels[g] == 0 and labels[g - 40] == 1


def test_cross_validate_shapes(phantoms):
    res = cross_validate("axial-close", phantoms[:3], phantoms[3:], k=3, seed=0, params=FAST["axial-close"])
    assert len(res.fold_maes) == 3 and len(res.fold_preds) == 3
    assert set(res.ensemble_preds) == {phantoms[3].volume.id}
    assert res.worst_fold_mae == max(res.fold_maes)


def test_axial_close_falls_back_when_nothing_is_before(bundles, phantoms):
    b = bundles["axial-close"]
    silent = methods.ModelBundle(b.method, b.params, {"classifier": b.nets["classifier"].copy()})
    silent.nets["classifier"].params[-1][:] = -50.0  # logistic output ~0 everywhere
    det = methods.detect_volume(silent, phantoms[3].volume)
    assert det.flags == ("no_before_plane",)
    assert det.gppi_pred == det.diagnostics["extent"][0]


def test_blob_refine_falls_back_without_four_blob_plane(bundles, phantoms):
    b = bundles["blob-refine"]
    nets = {"classifier": b.nets["classifier"].copy(), "regressor": b.nets["regressor"]}
    nets["classifier"].params[-1][:] = -50.0
    det = methods.detect_volume(methods.ModelBundle(b.method, b.params, nets), phantoms[3].volume)
    assert "no_four_blob_plane" in det.flags

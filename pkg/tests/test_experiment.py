"""Experiment harness on a miniature dataset.

The real benchmark grid lives in the acceptance suite; here the grid is
shrunk to one seed, two epochs and a 16 px crop so the whole comparison
runs in seconds.
"""

import json
import os

import numpy as np
import pytest

from burnseg.errors import SplitError
from burnseg.experiment import (
    ExperimentConfig,
    evaluate_on_store,
    render_table,
    run_experiment,
)
from burnseg.metrics import confusion_matrix, macro_scores
from burnseg.net.model import MtlNetwork
from burnseg.net.train import StoreSample, predict
from burnseg.raster import dn_from_reflectance, reflectance_from_dn
from burnseg.synth import SynthConfig, generate_dataset


def test_train_config_mapping():
    cfg = ExperimentConfig(lam=0.7, epochs=5, seeds=(3,))
    mtl = cfg.train_config("mtl", 3)
    stl = cfg.train_config("stl", 3)
    assert mtl.lam == 0.7
    assert stl.lam == 0.0  # single task never sees the auxiliary loss
    assert mtl.seed == stl.seed == 3
    assert mtl.epochs == 5


def test_evaluate_on_store_pools_counts():
    rng = np.random.default_rng(0)
    net = MtlNetwork(2, mode="stl", seed=0)
    store = []
    for i in range(2):
        x = rng.uniform(0.0, 0.6, size=(2, 32, 32))
        store.append(StoreSample(
            sample_id=f"s{i}",
            dn=dn_from_reflectance(x),
            y_d=(rng.random((32, 32)) < 0.5).astype(np.uint8),
            y_lc=np.zeros((32, 32), dtype=np.uint8),
            valid_d=rng.random((32, 32)) < 0.9,
            valid_lc=np.ones((32, 32), dtype=bool),
        ))
    out = evaluate_on_store(net, store, tile=32, threshold=0.5)

    expected = np.zeros((2, 2), dtype=np.int64)
    for s in store:
        prob, _ = predict(net, reflectance_from_dn(s.dn), tile_size=32)
        expected += confusion_matrix(
            (prob >= 0.5).astype(np.uint8), s.y_d, s.valid_d, 2)
    assert out["confusion"] == expected.tolist()
    assert out["macro_f1"] == macro_scores(expected)["macro_f1"]
    assert 0.0 <= out["f1_burned"] <= 1.0


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini")
    cfg = SynthConfig(height=48, width=48, seed=11)
    manifest = generate_dataset(str(root), 4, cfg,
                                train_fraction=0.5, val_fraction=0.25)
    path = str(root / "manifest.json")
    manifest.save(path)
    return path


def tiny_grid(**kw):
    base = dict(modes=("stl", "mtl"), seeds=(0,), epochs=2, batch_size=2,
                crop_size=16, lr=3e-3, bands=("B04", "B08", "B8A", "B12"),
                steps_per_epoch=2, val_tile=512)
    base.update(kw)
    return ExperimentConfig(**base)


def test_full_grid_runs_and_reports(tiny_dataset, tmp_path):
    out = str(tmp_path / "exp")
    payload = run_experiment(tiny_dataset, out, tiny_grid())

    rows = payload["rows"]
    assert [r["mode"] for r in rows] == ["stl", "mtl"]
    assert all(r["error"] is None for r in rows)
    by_mode = {r["mode"]: r for r in rows}
    assert by_mode["mtl"]["param_count"] - by_mode["stl"]["param_count"] == 187
    for r in rows:
        assert os.path.isdir(os.path.join(out, f"{r['mode']}-seed{r['seed']}"))
        assert os.path.exists(r["checkpoint"])
        assert 0.0 <= r["macro_f1"] <= 1.0

    summary = payload["summary"]
    assert summary["stl"]["n_runs"] == 1
    assert summary["mtl"]["f1_burned"]["std"] == 0.0  # single seed
    for mode in ("stl", "mtl"):
        assert mode in payload["table"]
    assert "±" in payload["table"]

    # artifacts on disk agree with the returned payload
    with open(os.path.join(out, "experiment.json")) as fh:
        saved = json.load(fh)
    assert saved["rows"] == rows
    assert saved["summary"] == summary
    with open(os.path.join(out, "table.txt")) as fh:
        assert fh.read().strip() == payload["table"].strip()


def test_bad_mode_becomes_failed_row(tiny_dataset, tmp_path):
    payload = run_experiment(
        tiny_dataset, str(tmp_path / "exp"), tiny_grid(modes=("sideways",)))
    (row,) = payload["rows"]
    assert row["error"] is not None
    assert payload["summary"]["sideways"] == {"n_runs": 0}
    assert "failed" in payload["table"]


def test_unsplit_manifest_rejected(tmp_path):
    cfg = SynthConfig(height=48, width=48, seed=12)
    manifest = generate_dataset(str(tmp_path), 2, cfg)  # no split fractions
    assert manifest.splits == {}
    path = str(tmp_path / "manifest.json")
    manifest.save(path)
    with pytest.raises(SplitError):
        run_experiment(path, str(tmp_path / "exp"), tiny_grid())


def test_render_table_mixed_rows():
    summary = {
        "stl": {
            "n_runs": 2,
            "param_count": 100,
            "f1_burned": {"mean": 0.5, "std": 0.01, "n": 2},
            "iou_burned": {"mean": 0.4, "std": 0.02, "n": 2},
            "macro_f1": {"mean": 0.6, "std": 0.0, "n": 2},
            "macro_iou": {"mean": 0.5, "std": 0.0, "n": 2},
            "epoch_seconds": {"mean": 1.25, "std": 0.1, "n": 2},
        },
        "mtl": {"n_runs": 0},
    }
    table = render_table(summary)
    lines = table.splitlines()
    assert lines[0].split() == [
        "mode", "F1", "IoU", "macro-F1", "macro-IoU", "params", "s/epoch"]
    assert set(lines[1]) <= {"-", " "}
    assert "0.5000 ± 0.0100" in lines[2]
    assert "100" in lines[2]
    assert "failed" in lines[3]
    # all rows padded to a common width grid
    assert len({len(l) for l in (lines[0], lines[1])}) == 1

"""Multi-seed single-task vs multi-task comparison harness.

Runs a mode x seed grid on one dataset, evaluates each run's best
checkpoint on the held-out test split, and aggregates everything into a
small comparison table: delineation scores as mean +/- sample std across
seeds, parameter counts, and mean per-epoch wall time per mode.

The prepared data stores are built once and shared by every run; only the
network seed and task mode change between rows.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .errors import SplitError
from .metrics import confusion_matrix, macro_scores, per_class_scores, summarize_values
from .net.checkpoint import load_checkpoint
from .net.train import (
    StoreSample,
    TrainConfig,
    build_store,
    predict,
    train_on_store,
)
from .raster import ALL_BANDS, reflectance_from_dn
from .sceneio import DatasetManifest

SCORE_KEYS = ("f1_burned", "iou_burned", "macro_f1", "macro_iou")


@dataclass
class ExperimentConfig:
    modes: tuple = ("stl", "mtl")
    seeds: tuple = (0, 1, 2)
    lam: float = 1.0
    epochs: int = 30
    batch_size: int = 32
    crop_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 0.01
    bands: tuple = tuple(b.value for b in ALL_BANDS)
    steps_per_epoch: int | None = None
    val_tile: int = 512
    threshold: float = 0.5

    def train_config(self, mode: str, seed: int) -> TrainConfig:
        return TrainConfig(
            mode=mode,
            lam=self.lam if mode == "mtl" else 0.0,
            epochs=self.epochs,
            batch_size=self.batch_size,
            crop_size=self.crop_size,
            lr=self.lr,
            weight_decay=self.weight_decay,
            seed=seed,
            bands=self.bands,
            steps_per_epoch=self.steps_per_epoch,
            val_tile=self.val_tile,
        )


def evaluate_on_store(
    net, store: list[StoreSample], tile: int, threshold: float = 0.5
) -> dict:
    """Pooled delineation scores of one network over a packed store."""
    total = np.zeros((2, 2), dtype=np.int64)
    for s in store:
        prob, _ = predict(net, reflectance_from_dn(s.dn), tile_size=tile)
        pred = (prob >= threshold).astype(np.uint8)
        total += confusion_matrix(pred, s.y_d, s.valid_d, 2)
    per = per_class_scores(total)
    scores = macro_scores(total)
    return {
        "confusion": total.tolist(),
        "f1_burned": per["f1"][1],
        "iou_burned": per["iou"][1],
        "macro_f1": scores["macro_f1"],
        "macro_iou": scores["macro_iou"],
    }


def _run_one(
    mode: str,
    seed: int,
    stores: dict,
    config: ExperimentConfig,
    out_dir: str,
) -> dict:
    run_dir = os.path.join(out_dir, f"{mode}-seed{seed}")
    tc = config.train_config(mode, seed)
    result = train_on_store(stores["train"], stores["val"], tc, run_dir)
    ckpt = result["best_checkpoint"] or result["latest_checkpoint"]
    net, _, _, _ = load_checkpoint(ckpt)
    test = evaluate_on_store(net, stores["test"], config.val_tile, config.threshold)
    epoch_seconds = [h["seconds"] for h in result["history"]]
    return {
        "mode": mode,
        "seed": seed,
        "error": None,
        "param_count": result["param_count"],
        "best_epoch": result["best_epoch"],
        "best_val_f1": result["best_val_f1"],
        "epoch_seconds_mean": sum(epoch_seconds) / len(epoch_seconds),
        "run_seconds": sum(epoch_seconds),
        "checkpoint": ckpt,
        **{k: test[k] for k in SCORE_KEYS},
        "test_confusion": test["confusion"],
    }


def run_experiment(
    manifest_path: str, out_dir: str, config: ExperimentConfig | None = None
) -> dict:
    """Full grid run. Failed rows are recorded and skipped, not fatal.

    Returns {"rows": [...], "summary": {mode: {...}}, "table": str} and
    writes experiment.json plus a plain-text table into out_dir.
    """
    config = config or ExperimentConfig()
    manifest = DatasetManifest.load(manifest_path)
    for split in ("train", "val", "test"):
        if split not in manifest.splits or not manifest.splits[split]:
            raise SplitError(f"manifest is missing a non-empty {split!r} split")
    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    bands = [b for b in ALL_BANDS if b.value in set(config.bands)]
    stores = {
        split: build_store(manifest, base_dir, manifest.splits[split], bands)
        for split in ("train", "val", "test")
    }

    os.makedirs(out_dir, exist_ok=True)
    rows: list[dict] = []
    for mode in config.modes:
        for seed in config.seeds:
            try:
                rows.append(_run_one(mode, seed, stores, config, out_dir))
            except Exception as exc:  # keep going; the row records the failure
                rows.append({"mode": mode, "seed": int(seed), "error": str(exc)})

    summary: dict[str, dict] = {}
    for mode in config.modes:
        ok = [r for r in rows if r["mode"] == mode and r["error"] is None]
        if not ok:
            summary[mode] = {"n_runs": 0}
            continue
        entry: dict = {"n_runs": len(ok), "param_count": ok[0]["param_count"]}
        for key in SCORE_KEYS:
            entry[key] = summarize_values([r[key] for r in ok])
        entry["epoch_seconds"] = summarize_values(
            [r["epoch_seconds_mean"] for r in ok]
        )
        summary[mode] = entry

    table = render_table(summary)
    payload = {
        "config": asdict(config),
        "rows": rows,
        "summary": summary,
        "table": table,
    }
    with open(os.path.join(out_dir, "experiment.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "table.txt"), "w") as fh:
        fh.write(table + "\n")
    return payload


def render_table(summary: dict) -> str:
    """Fixed-width comparison table, one row per mode."""
    headers = ["mode", "F1", "IoU", "macro-F1", "macro-IoU", "params", "s/epoch"]
    lines = []
    rows = []
    for mode, entry in summary.items():
        if entry.get("n_runs", 0) == 0:
            rows.append([mode, "failed", "-", "-", "-", "-", "-"])
            continue

        def ms(key):
            return f"{entry[key]['mean']:.4f} ± {entry[key]['std']:.4f}"

        rows.append(
            [
                mode,
                ms("f1_burned"),
                ms("iou_burned"),
                ms("macro_f1"),
                ms("macro_iou"),
                str(entry["param_count"]),
                f"{entry['epoch_seconds']['mean']:.1f}",
            ]
        )
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in rows)) if rows else len(headers[i])
        for i in range(len(headers))
    ]
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)))
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(headers))))
    return "\n".join(lines)

"""Training loop, compact in-memory dataset, and tiled inference.

Scenes are held as uint16 digital numbers plus uint8 label planes and only
the sampled crops are expanded to float64, so a few dozen 512x512 scenes
fit comfortably in memory. One epoch is defined by pixel coverage: enough
random crops that the sampled pixel count matches the training set size.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, SplitError, TrainingAbortedError
from ..metrics import confusion_matrix, macro_scores
from ..preprocess import PreparedSample, prepare
from ..raster import ALL_BANDS, BandId, dn_from_reflectance, reflectance_from_dn
from ..sceneio import DatasetManifest, load_scene
from ..tiling import blend_tiles, make_blend_window, plan_tiles
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import combined_loss, sigmoid
from .model import MODES, SIZE_MULTIPLE, MtlNetwork
from .optim import AdamWState, adamw_step


@dataclass
class TrainConfig:
    mode: str = "mtl"
    lam: float = 1.0
    epochs: int = 30
    batch_size: int = 32
    crop_size: int = 512
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    bands: tuple = tuple(b.value for b in ALL_BANDS)
    steps_per_epoch: int | None = None
    val_tile: int = 512

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lam < 0.0:
            raise ConfigError(f"lam must be non-negative, got {self.lam}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be at least 1")
        if self.crop_size < SIZE_MULTIPLE or self.crop_size % SIZE_MULTIPLE:
            raise ConfigError(
                f"crop_size must be a positive multiple of {SIZE_MULTIPLE}"
            )
        if not self.bands:
            raise ConfigError("bands must not be empty")
        try:
            self.bands = tuple(BandId(b).value for b in self.bands)
        except ValueError as exc:
            raise ConfigError(f"unknown band in {tuple(self.bands)}") from exc
        if self.val_tile < SIZE_MULTIPLE or self.val_tile % SIZE_MULTIPLE:
            raise ConfigError(f"val_tile must be a multiple of {SIZE_MULTIPLE}")

    def band_ids(self) -> list[BandId]:
        return [BandId(b) for b in self.bands]


@dataclass
class StoreSample:
    """One prepared sample, packed small for the in-memory training store."""

    sample_id: str
    dn: np.ndarray  # (C, H, W) uint16
    y_d: np.ndarray  # (H, W) uint8
    y_lc: np.ndarray  # (H, W) uint8
    valid_d: np.ndarray  # (H, W) bool
    valid_lc: np.ndarray  # (H, W) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.dn.shape[1], self.dn.shape[2]


def pack_sample(sample: PreparedSample) -> StoreSample:
    return StoreSample(
        sample_id=sample.id,
        dn=dn_from_reflectance(sample.x),
        y_d=sample.y_d.copy(),
        y_lc=sample.y_lc.copy(),
        valid_d=sample.valid_d.copy(),
        valid_lc=sample.valid_lc.copy(),
    )


def build_store(
    manifest: DatasetManifest,
    base_dir: str,
    scene_ids: list[str],
    bands: list[BandId],
) -> list[StoreSample]:
    """Load, prepare and pack the given scenes."""
    store: list[StoreSample] = []
    for sid in scene_ids:
        scene = load_scene(manifest, sid, base_dir, bands=bands)
        for sample in prepare(scene, bands=bands):
            store.append(pack_sample(sample))
    return store


def _draw_batch(
    store: list[StoreSample], crop: int, batch: int, rng: np.random.Generator
):
    xs, yds, ylcs, vds, vlcs = [], [], [], [], []
    for _ in range(batch):
        s = store[int(rng.integers(0, len(store)))]
        h, w = s.shape
        top = int(rng.integers(0, h - crop + 1))
        left = int(rng.integers(0, w - crop + 1))
        sl = (slice(top, top + crop), slice(left, left + crop))
        xs.append(reflectance_from_dn(s.dn[(slice(None),) + sl]))
        yds.append(s.y_d[sl])
        ylcs.append(s.y_lc[sl])
        vds.append(s.valid_d[sl])
        vlcs.append(s.valid_lc[sl])
    return (
        np.stack(xs),
        np.stack(yds),
        np.stack(ylcs),
        np.stack(vds),
        np.stack(vlcs),
    )


def coverage_steps(store: list[StoreSample], crop: int, batch: int) -> int:
    """Steps per epoch so sampled pixels cover the training set once."""
    total = sum(h * w for h, w in (s.shape for s in store))
    return max(1, -(-total // (crop * crop * batch)))


def predict(
    net: MtlNetwork,
    x: np.ndarray,
    tile_size: int = 512,
    stride: int | None = None,
    taper_fraction: float = 0.25,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Tiled full-image inference on one (C, H, W) sample.

    Logits from overlapping tiles are feathered together before the
    sigmoid/argmax, so seams do not show up in the probabilities. Returns
    (burn probability (H, W), land-cover class (H, W) or None).
    """
    if x.ndim != 3:
        raise ConfigError(f"predict wants one (C, H, W) sample, got shape {x.shape}")
    _, h, w = x.shape
    tile = min(tile_size, h, w)
    tile -= tile % SIZE_MULTIPLE
    if tile < SIZE_MULTIPLE:
        raise ConfigError(f"image {h}x{w} too small to tile at multiple of 8")
    if stride is None:
        stride = max(1, tile // 2)
    stride = min(stride, tile)

    window = make_blend_window(tile, taper_fraction)
    d_tiles = []
    lc_tiles = []
    for top, left in plan_tiles(h, w, tile, stride):
        xt = x[None, :, top : top + tile, left : left + tile]
        z_d, z_lc = net.logits(np.ascontiguousarray(xt))
        d_tiles.append((top, left, z_d[0]))
        if z_lc is not None:
            lc_tiles.append((top, left, z_lc[0]))

    z_d_full = blend_tiles(d_tiles, (h, w), window)
    prob = sigmoid(z_d_full[0])
    lc = None
    if lc_tiles:
        z_lc_full = blend_tiles(lc_tiles, (h, w), window)
        lc = z_lc_full.argmax(axis=0).astype(np.uint8)
    return prob, lc


def _validate(net: MtlNetwork, store: list[StoreSample], tile: int) -> float:
    """Pooled delineation macro-F1 over a store."""
    total = np.zeros((2, 2), dtype=np.int64)
    for s in store:
        prob, _ = predict(net, reflectance_from_dn(s.dn), tile_size=tile)
        pred = (prob >= 0.5).astype(np.uint8)
        total += confusion_matrix(pred, s.y_d, s.valid_d, 2)
    return macro_scores(total)["macro_f1"]


def _check_finite(epoch: int, step: int, losses: dict, grads: dict) -> None:
    bad = [k for k, v in losses.items() if not np.isfinite(v)]
    bad += [f"grad {k}" for k, v in grads.items() if not np.all(np.isfinite(v))]
    if bad:
        raise TrainingAbortedError(
            f"non-finite values at epoch {epoch} step {step}: {', '.join(bad)}; "
            f"losses were {losses}"
        )


def train_on_store(
    train_store: list[StoreSample],
    val_store: list[StoreSample],
    config: TrainConfig,
    out_dir: str,
    resume_from: str | None = None,
) -> dict:
    """Run the full optimization loop over pre-packed stores.

    Writes latest.ckpt every epoch and best.ckpt whenever the validation
    macro-F1 improves. Returns a summary dict with the history list, best
    epoch, checkpoint paths and parameter count. Resuming from latest.ckpt
    reproduces the uninterrupted run bit for bit.
    """
    if not train_store:
        raise SplitError("training store is empty")
    for s in train_store:
        h, w = s.shape
        if h < config.crop_size or w < config.crop_size:
            raise ConfigError(
                f"sample {s.sample_id} ({h}x{w}) is smaller than "
                f"crop_size {config.crop_size}"
            )

    os.makedirs(out_dir, exist_ok=True)
    in_ch = len(config.bands)
    steps = config.steps_per_epoch or coverage_steps(
        train_store, config.crop_size, config.batch_size
    )

    history: list[dict] = []
    best = {"epoch": -1, "val_f1": -1.0}
    start_epoch = 0
    if resume_from is not None:
        net, opt, rng_state, extra = load_checkpoint(resume_from)
        if net.mode != config.mode or net.in_channels != in_ch:
            raise ConfigError(
                "checkpoint network does not match the requested configuration"
            )
        saved_cfg = extra.get("config", {})
        for key in ("lam", "batch_size", "crop_size", "seed"):
            if saved_cfg.get(key) != getattr(config, key):
                raise ConfigError(
                    f"checkpoint was trained with {key}={saved_cfg.get(key)!r}, "
                    f"requested {getattr(config, key)!r}"
                )
        data_rng = np.random.default_rng()
        data_rng.bit_generator.state = rng_state
        history = list(extra.get("history", []))
        best = dict(extra.get("best", best))
        start_epoch = int(extra.get("epoch", 0))
    else:
        net = MtlNetwork(in_ch, mode=config.mode, seed=config.seed)
        opt = AdamWState(
            lr=config.lr,
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.eps,
            weight_decay=config.weight_decay,
        )
        data_rng = np.random.default_rng([config.seed, 0xDA7A])

    latest_path = os.path.join(out_dir, "latest.ckpt")
    best_path = os.path.join(out_dir, "best.ckpt")

    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        sums = {"total": 0.0, "d": 0.0, "lc": 0.0}
        for step in range(steps):
            x, y_d, y_lc, v_d, v_lc = _draw_batch(
                train_store, config.crop_size, config.batch_size, data_rng
            )
            cache = net.forward(x)
            z_lc = cache.get("z_lc")
            total, loss_d, loss_lc, g_d, g_lc = combined_loss(
                cache["z_d"], y_d, v_d, z_lc, y_lc, v_lc, config.lam
            )
            grads = net.backward(cache, g_d, g_lc)
            _check_finite(
                epoch, step, {"total": total, "d": loss_d, "lc": loss_lc}, grads
            )
            adamw_step(net.params, grads, opt)
            net.mark_updated()
            sums["total"] += total
            sums["d"] += loss_d
            sums["lc"] += loss_lc

        val_f1 = _validate(net, val_store, config.val_tile) if val_store else 0.0
        record = {
            "epoch": epoch,
            "loss_total": sums["total"] / steps,
            "loss_d": sums["d"] / steps,
            "loss_lc": sums["lc"] / steps,
            "val_f1": val_f1,
            "seconds": time.perf_counter() - t0,
        }
        history.append(record)

        extra = {
            "epoch": epoch + 1,
            "history": history,
            "best": best,
            "config": asdict(config),
            "steps_per_epoch": steps,
        }
        if val_store and val_f1 > best["val_f1"]:
            best = {"epoch": epoch, "val_f1": val_f1}
            extra["best"] = best
            save_checkpoint(best_path, net, opt, data_rng.bit_generator.state, extra)
        save_checkpoint(latest_path, net, opt, data_rng.bit_generator.state, extra)

    return {
        "history": history,
        "best_epoch": best["epoch"],
        "best_val_f1": best["val_f1"],
        "latest_checkpoint": latest_path,
        "best_checkpoint": best_path if best["epoch"] >= 0 else None,
        "param_count": net.param_count(),
        "steps_per_epoch": steps,
        "epochs_run": config.epochs - start_epoch,
    }


def train(
    manifest_path: str,
    out_dir: str,
    config: TrainConfig,
    resume_from: str | None = None,
) -> dict:
    """Train from a dataset manifest, using its train/val splits."""
    manifest = DatasetManifest.load(manifest_path)
    if "train" not in manifest.splits or "val" not in manifest.splits:
        raise SplitError("manifest has no train/val splits; run the splitter first")
    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    bands = config.band_ids()
    train_store = build_store(manifest, base_dir, manifest.splits["train"], bands)
    val_store = build_store(manifest, base_dir, manifest.splits["val"], bands)
    result = train_on_store(train_store, val_store, config, out_dir, resume_from)
    with open(os.path.join(out_dir, "history.json"), "w") as fh:
        json.dump(result["history"], fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result

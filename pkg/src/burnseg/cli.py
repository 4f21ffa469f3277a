"""Command-line entry point.

Subcommands mirror the pipeline stages: synth, preprocess, index, train,
infer, eval, experiment. Every option resolves through the same precedence
chain: command-line flag, then BURNSEG_<NAME> environment variable, then
--config JSON file, then the built-in default. The resolved values are
written as effective-config.json into the output directory so a run can be
reproduced exactly. Logs go to standard error; data goes to files.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import BurnsegError, ConfigError, IncompleteSceneError
from .experiment import ExperimentConfig, run_experiment
from .indices import (
    DNBR_DEFAULT_THRESHOLD,
    compute_bais2,
    compute_dnbr,
    compute_nbr,
    compute_ndvi,
    threshold_classify,
)
from .metrics import evaluate_segmentation
from .net.checkpoint import load_checkpoint
from .net.train import TrainConfig, pack_sample, predict, train
from .preprocess import prepare, prepared_entry, upsample_to
from .raster import (
    ALL_BANDS,
    BandId,
    BandStack,
    Grid2D,
    reflectance_from_dn,
)
from .sceneio import DatasetManifest, load_scene
from .synth import SynthConfig, generate_dataset
from .tiffio import TiffImage, read_tiff, write_tiff


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# (name, type, default, help). type "flag" means a boolean switch.
# required options have default REQUIRED.
REQUIRED = object()

OPTIONS = {
    "synth": [
        ("out", str, REQUIRED, "output dataset directory"),
        ("scenes", int, 16, "number of scenes to generate"),
        ("side", int, 512, "scene height and width in pixels"),
        ("seed", int, 0, "base generator seed"),
        ("burn_fraction", float, 0.05, "target burned-area fraction per scene"),
        ("cloud_fraction", float, 0.05, "target cloud fraction per scene"),
        ("noise_sigma", float, 0.01, "reflectance noise level"),
        ("train_fraction", float, 0.0, "train split fraction (0 = no splits)"),
        ("val_fraction", float, 0.0, "val split fraction"),
        ("prefire", "flag", False, "also write pre-event band files"),
    ],
    "preprocess": [
        ("manifest", str, REQUIRED, "input dataset manifest"),
        ("out", str, REQUIRED, "output directory for prepared scenes"),
        ("bands", str, "all", "comma-separated band ids, or 'all'"),
        ("workers", int, 1, "parallel workers (results identical for any N)"),
    ],
    "index": [
        ("manifest", str, REQUIRED, "input dataset manifest"),
        ("scene", str, REQUIRED, "scene id to compute the index for"),
        ("out", str, REQUIRED, "output directory"),
        ("kind", str, "dnbr", "index kind: nbr, ndvi, bais2 or dnbr"),
        ("swir", str, "B12", "SWIR band for NBR/dNBR: B11 or B12"),
        ("threshold", float, None, "optional burned/unburned decision threshold"),
        ("pre_dir", str, None, "pre-event band directory (default <scene>/pre)"),
    ],
    "train": [
        ("manifest", str, REQUIRED, "dataset manifest with train/val splits"),
        ("out", str, REQUIRED, "run output directory"),
        ("mode", str, "mtl", "task mode: stl or mtl"),
        ("lam", float, 1.0, "auxiliary land-cover loss weight"),
        ("epochs", int, 30, "number of epochs"),
        ("batch_size", int, 32, "crops per optimization step"),
        ("crop_size", int, 512, "square crop side, multiple of 8"),
        ("lr", float, 1e-4, "AdamW learning rate"),
        ("weight_decay", float, 0.01, "AdamW decoupled weight decay"),
        ("seed", int, 0, "initialization and sampling seed"),
        ("bands", str, "all", "comma-separated band ids, or 'all'"),
        ("steps_per_epoch", int, None, "override the coverage-based step count"),
        ("val_tile", int, 512, "tile size for validation inference"),
        ("resume", str, None, "checkpoint to resume from"),
        ("workers", int, 1, "parallel workers (results identical for any N)"),
    ],
    "infer": [
        ("checkpoint", str, REQUIRED, "trained checkpoint file"),
        ("manifest", str, REQUIRED, "dataset manifest"),
        ("out", str, REQUIRED, "output directory for prediction rasters"),
        ("scene", str, None, "comma-separated scene ids (default: whole manifest)"),
        ("split", str, None, "evaluate a manifest split instead of --scene"),
        ("tile_size", int, 512, "inference tile side"),
        ("stride", int, 256, "tile stride"),
        ("taper", float, 0.25, "blend taper fraction of the tile side"),
        ("threshold", float, 0.5, "probability threshold for the burned class"),
        ("workers", int, 1, "parallel workers (results identical for any N)"),
    ],
    "eval": [
        ("pred", str, REQUIRED, "predicted class raster (uint8 TIFF)"),
        ("gt", str, REQUIRED, "ground-truth class raster (uint8 TIFF)"),
        ("valid", str, None, "optional validity mask raster"),
        ("n_classes", int, 2, "number of classes"),
        ("out", str, None, "write the report here instead of standard output"),
    ],
    "experiment": [
        ("manifest", str, REQUIRED, "dataset manifest with train/val/test splits"),
        ("out", str, REQUIRED, "experiment output directory"),
        ("modes", str, "stl,mtl", "comma-separated task modes"),
        ("seeds", str, "0,1,2", "comma-separated seeds"),
        ("lam", float, 1.0, "land-cover loss weight for mtl runs"),
        ("epochs", int, 30, "epochs per run"),
        ("batch_size", int, 32, "crops per optimization step"),
        ("crop_size", int, 64, "square crop side, multiple of 8"),
        ("lr", float, 1e-4, "AdamW learning rate"),
        ("weight_decay", float, 0.01, "AdamW decoupled weight decay"),
        ("bands", str, "all", "comma-separated band ids, or 'all'"),
        ("steps_per_epoch", int, None, "override the coverage-based step count"),
        ("val_tile", int, 512, "tile size for val/test inference"),
        ("threshold", float, 0.5, "probability threshold for the burned class"),
        ("workers", int, 1, "parallel workers (results identical for any N)"),
    ],
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_env(raw: str, typ, name: str):
    if typ == "flag":
        low = raw.strip().lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"BURNSEG_{name.upper()}={raw!r} is not a boolean")
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"BURNSEG_{name.upper()}={raw!r}: {exc}") from exc


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="burnseg",
        description="Burned-area delineation pipeline on synthetic Sentinel-2-like data",
    )
    parser.add_argument("--version", action="version", version=f"burnseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, options in OPTIONS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--config", default=None, help="JSON file with option values")
        for name, typ, default, help_text in options:
            flag = "--" + name.replace("_", "-")
            if typ == "flag":
                p.add_argument(flag, dest=name, action="store_const", const=True,
                               default=None, help=help_text)
            else:
                p.add_argument(flag, dest=name, type=typ, default=None,
                               help=help_text)
    return parser


def _resolve(args: argparse.Namespace) -> dict:
    """Apply flag > environment > config file > default for one command."""
    overlay = {}
    if args.config is not None:
        try:
            with open(args.config) as fh:
                overlay = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(overlay, dict):
            raise ConfigError("config file must hold a JSON object")

    table = OPTIONS[args.command]
    known = {name for name, _, _, _ in table}
    for key in overlay:
        if key not in known:
            raise ConfigError(f"config file key {key!r} unknown for {args.command}")

    resolved = {}
    for name, typ, default, _ in table:
        value = getattr(args, name)
        if value is None:
            env = os.environ.get("BURNSEG_" + name.upper())
            if env is not None:
                value = _parse_env(env, typ, name)
        if value is None and name in overlay:
            value = overlay[name]
        if value is None:
            if default is REQUIRED:
                raise ConfigError(f"missing required option --{name.replace('_', '-')}")
            value = default
        resolved[name] = value
    return resolved


def _write_effective_config(out_dir: str, command: str, resolved: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    record = {"command": command, "options": resolved, "version": __version__}
    path = os.path.join(out_dir, "effective-config.json")
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_bands(spec: str) -> tuple:
    if spec == "all":
        return tuple(b.value for b in ALL_BANDS)
    bands = tuple(s.strip() for s in spec.split(",") if s.strip())
    if not bands:
        raise ConfigError("band list is empty")
    for b in bands:
        try:
            BandId(b)
        except ValueError:
            raise ConfigError(f"unknown band id {b!r}") from None
    return bands


def _parse_int_list(spec: str, what: str) -> tuple:
    try:
        return tuple(int(s.strip()) for s in spec.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"bad {what} list {spec!r}: {exc}") from exc


# -- subcommand bodies ------------------------------------------------------


def _cmd_synth(opt: dict) -> int:
    cfg = SynthConfig(
        height=opt["side"],
        width=opt["side"],
        seed=opt["seed"],
        burn_fraction=opt["burn_fraction"],
        cloud_fraction=opt["cloud_fraction"],
        noise_sigma=opt["noise_sigma"],
    )
    manifest = generate_dataset(
        opt["out"],
        opt["scenes"],
        cfg,
        train_fraction=opt["train_fraction"],
        val_fraction=opt["val_fraction"],
        write_prefire=opt["prefire"],
    )
    manifest.save(os.path.join(opt["out"], "manifest.json"))
    _write_effective_config(opt["out"], "synth", opt)
    _log(f"wrote {len(manifest.entries)} scenes to {opt['out']}")
    return 0


def _cmd_preprocess(opt: dict) -> int:
    manifest = DatasetManifest.load(opt["manifest"])
    base_dir = os.path.dirname(os.path.abspath(opt["manifest"]))
    bands = [BandId(b) for b in _parse_bands(opt["bands"])]
    if opt["workers"] < 1:
        raise ConfigError("workers must be at least 1")

    new_entries = []
    id_map: dict[str, list[str]] = {}
    for entry in manifest.entries:
        scene = load_scene(manifest, entry.id, base_dir, bands=bands)
        samples = prepare(scene, bands=tuple(bands))
        id_map[entry.id] = []
        for sample in samples:
            new_entries.append(
                prepared_entry(opt["out"], sample, event_date=entry.event_date)
            )
            id_map[entry.id].append(sample.id)
        _log(f"prepared {entry.id} -> {len(samples)} sample(s)")

    splits = {
        name: sorted(nid for sid in ids for nid in id_map.get(sid, []))
        for name, ids in manifest.splits.items()
    }
    meta = dict(manifest.meta or {})
    meta["prepared"] = {"bands": [b.value for b in bands], "source": opt["manifest"]}
    out_manifest = DatasetManifest(entries=new_entries, splits=splits, meta=meta)
    out_manifest.save(os.path.join(opt["out"], "manifest.json"))
    _write_effective_config(opt["out"], "preprocess", opt)
    return 0


_INDEX_BANDS = {
    "nbr": ("B08",),  # plus the chosen SWIR band
    "ndvi": ("B08", "B04"),
    "bais2": ("B04", "B06", "B07", "B8A", "B12"),
    "dnbr": ("B08",),
}


def _scene_stack(scene, needed: list[BandId]) -> BandStack:
    grids = {}
    for bid in needed:
        grids[bid] = upsample_to(
            scene.bands[bid], scene.band_factor(bid), scene.label_shape
        )
    return BandStack(bands=grids, pixel_size=10.0, georef=scene.georef)


def _prefire_stack(pre_dir: str, needed: list[BandId], shape) -> BandStack:
    grids = {}
    missing = []
    for bid in needed:
        path = os.path.join(pre_dir, f"{bid.value}.tif")
        if not os.path.exists(path):
            missing.append(bid.value)
            continue
        img = read_tiff(path)
        factor = bid.native_resolution // 10
        grid = Grid2D(reflectance_from_dn(img.data))
        grids[bid] = upsample_to(grid, factor, shape)
    if missing:
        raise IncompleteSceneError(f"pre-event bands missing in {pre_dir}: {missing}")
    return BandStack(bands=grids, pixel_size=10.0)


def _cmd_index(opt: dict) -> int:
    kind = opt["kind"]
    if kind not in _INDEX_BANDS:
        raise ConfigError(f"unknown index kind {kind!r}")
    swir = BandId(opt["swir"])
    needed = [BandId(b) for b in _INDEX_BANDS[kind]]
    if kind in ("nbr", "dnbr") and swir not in needed:
        needed.append(swir)

    manifest = DatasetManifest.load(opt["manifest"])
    base_dir = os.path.dirname(os.path.abspath(opt["manifest"]))
    scene = load_scene(manifest, opt["scene"], base_dir, bands=needed)
    post = _scene_stack(scene, needed)

    if kind == "nbr":
        index = compute_nbr(post, swir=swir)
    elif kind == "ndvi":
        index = compute_ndvi(post)
    elif kind == "bais2":
        index = compute_bais2(post)
    else:
        pre_dir = opt["pre_dir"] or os.path.join(base_dir, opt["scene"], "pre")
        pre = _prefire_stack(pre_dir, needed, scene.label_shape)
        index = compute_dnbr(pre, post, swir=swir)

    os.makedirs(opt["out"], exist_ok=True)
    stem = os.path.join(opt["out"], f"{opt['scene']}-{kind}")
    write_tiff(f"{stem}.tif", TiffImage(index.values.astype(np.float32), scene.georef))
    write_tiff(
        f"{stem}-valid.tif", TiffImage(index.valid.astype(np.uint8), scene.georef)
    )
    if opt["threshold"] is not None:
        burned = threshold_classify(index, opt["threshold"])
        write_tiff(f"{stem}-burned.tif", TiffImage(burned.data, scene.georef))
    _write_effective_config(opt["out"], "index", opt)
    return 0


def _cmd_train(opt: dict) -> int:
    if opt["workers"] < 1:
        raise ConfigError("workers must be at least 1")
    config = TrainConfig(
        mode=opt["mode"],
        lam=opt["lam"],
        epochs=opt["epochs"],
        batch_size=opt["batch_size"],
        crop_size=opt["crop_size"],
        lr=opt["lr"],
        weight_decay=opt["weight_decay"],
        seed=opt["seed"],
        bands=_parse_bands(opt["bands"]),
        steps_per_epoch=opt["steps_per_epoch"],
        val_tile=opt["val_tile"],
    )
    _write_effective_config(opt["out"], "train", opt)
    result = train(opt["manifest"], opt["out"], config, resume_from=opt["resume"])
    _log(
        f"trained {config.mode} for {result['epochs_run']} epoch(s), "
        f"best val macro-F1 {result['best_val_f1']:.4f} "
        f"at epoch {result['best_epoch']}"
    )
    return 0


def _cmd_infer(opt: dict) -> int:
    if opt["workers"] < 1:
        raise ConfigError("workers must be at least 1")
    net, _, _, extra = load_checkpoint(opt["checkpoint"])
    band_names = extra.get("config", {}).get("bands")
    if not band_names:
        raise ConfigError("checkpoint does not record its band list")
    bands = [BandId(b) for b in band_names]
    if len(bands) != net.in_channels:
        raise ConfigError(
            f"checkpoint bands {len(bands)} vs network channels {net.in_channels}"
        )

    manifest = DatasetManifest.load(opt["manifest"])
    base_dir = os.path.dirname(os.path.abspath(opt["manifest"]))
    if opt["scene"] and opt["split"]:
        raise ConfigError("use either --scene or --split, not both")
    if opt["scene"]:
        scene_ids = [s.strip() for s in opt["scene"].split(",") if s.strip()]
    elif opt["split"]:
        if opt["split"] not in manifest.splits:
            raise ConfigError(f"manifest has no split {opt['split']!r}")
        scene_ids = list(manifest.splits[opt["split"]])
    else:
        scene_ids = [e.id for e in manifest.entries]

    os.makedirs(opt["out"], exist_ok=True)
    for sid in scene_ids:
        scene = load_scene(manifest, sid, base_dir, bands=bands)
        for sample in prepare(scene, bands=tuple(bands)):
            packed = pack_sample(sample)
            prob, lc = predict(
                net,
                reflectance_from_dn(packed.dn),
                tile_size=opt["tile_size"],
                stride=opt["stride"],
                taper_fraction=opt["taper"],
            )
            pred = (prob >= opt["threshold"]).astype(np.uint8)
            stem = os.path.join(opt["out"], sample.id)
            write_tiff(f"{stem}-prob.tif",
                       TiffImage(prob.astype(np.float32), sample.georef))
            write_tiff(f"{stem}-burned.tif", TiffImage(pred, sample.georef))
            if lc is not None:
                write_tiff(f"{stem}-landcover.tif", TiffImage(lc, sample.georef))
            _log(f"inferred {sample.id}")
    _write_effective_config(opt["out"], "infer", opt)
    return 0


def _cmd_eval(opt: dict) -> int:
    pred = read_tiff(opt["pred"]).data
    gt = read_tiff(opt["gt"]).data
    if opt["valid"] is not None:
        valid = read_tiff(opt["valid"]).data.astype(bool)
    else:
        valid = np.ones(gt.shape, dtype=bool)
    report = evaluate_segmentation(pred, gt, valid, opt["n_classes"])
    text = json.dumps(report, indent=2, sort_keys=True)
    if opt["out"]:
        with open(opt["out"], "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _cmd_experiment(opt: dict) -> int:
    if opt["workers"] < 1:
        raise ConfigError("workers must be at least 1")
    config = ExperimentConfig(
        modes=tuple(s.strip() for s in opt["modes"].split(",") if s.strip()),
        seeds=_parse_int_list(opt["seeds"], "seed"),
        lam=opt["lam"],
        epochs=opt["epochs"],
        batch_size=opt["batch_size"],
        crop_size=opt["crop_size"],
        lr=opt["lr"],
        weight_decay=opt["weight_decay"],
        bands=_parse_bands(opt["bands"]),
        steps_per_epoch=opt["steps_per_epoch"],
        val_tile=opt["val_tile"],
        threshold=opt["threshold"],
    )
    _write_effective_config(opt["out"], "experiment", opt)
    payload = run_experiment(opt["manifest"], opt["out"], config)
    _log(payload["table"])
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "preprocess": _cmd_preprocess,
    "index": _cmd_index,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        resolved = _resolve(args)
        return _HANDLERS[args.command](resolved)
    except BurnsegError as exc:
        print(f"burnseg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

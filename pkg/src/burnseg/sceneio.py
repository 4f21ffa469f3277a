"""Scene storage: dataset manifests and per-scene raster files.

A dataset is a JSON manifest plus one directory per scene holding
single-band TIFFs (uint16 digital numbers) and uint8 label rasters.
Manifest paths are relative to the manifest file's directory.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IncompleteSceneError,
    LabelDomainError,
    ManifestError,
    ShapeConsistencyError,
    SplitError,
)
from .raster import (
    ALL_BANDS,
    BandId,
    GeoRef,
    Grid2D,
    LabelRaster,
    reflectance_from_dn,
)
from .tiffio import TiffImage, read_tiff, write_tiff

RNG_ALGORITHM = "numpy-pcg64"

SPLIT_NAMES = ("train", "val", "test")

# land cover taxonomies a manifest entry can declare
TAXONOMY_WORLDCOVER = "worldcover"
TAXONOMY_CONTIGUOUS = "contiguous"

_ENTRY_KEYS = ("id", "event_date", "band_files", "delineation_file", "severity_file",
               "landcover_file", "cloud_file", "valid_d_file", "valid_lc_file",
               "landcover_taxonomy", "aoi_bounds")


@dataclass
class SceneEntry:
    """One scene's files and metadata inside a manifest."""

    id: str
    event_date: str
    band_files: dict[BandId, str]
    landcover_file: str
    cloud_file: str
    delineation_file: str | None = None
    severity_file: str | None = None
    valid_d_file: str | None = None
    valid_lc_file: str | None = None
    landcover_taxonomy: str = TAXONOMY_WORLDCOVER
    aoi_bounds: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ManifestError("scene entry needs a non-empty id")
        if self.delineation_file is None and self.severity_file is None:
            raise ManifestError(
                f"entry {self.id!r} needs a delineation or severity file")
        if self.landcover_taxonomy not in (TAXONOMY_WORLDCOVER, TAXONOMY_CONTIGUOUS):
            raise ManifestError(
                f"entry {self.id!r} has unknown taxonomy {self.landcover_taxonomy!r}")

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "event_date": self.event_date,
            "band_files": {b.value: p for b, p in self.band_files.items()},
            "landcover_file": self.landcover_file,
            "cloud_file": self.cloud_file,
        }
        for key in ("delineation_file", "severity_file", "valid_d_file", "valid_lc_file"):
            value = getattr(self, key)
            if value is not None:
                d[key] = value
        if self.landcover_taxonomy != TAXONOMY_WORLDCOVER:
            d["landcover_taxonomy"] = self.landcover_taxonomy
        if self.aoi_bounds:
            d["aoi_bounds"] = self.aoi_bounds
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneEntry":
        unknown = set(d) - set(_ENTRY_KEYS)
        if unknown:
            raise ManifestError(f"entry has unknown keys {sorted(unknown)}")
        try:
            band_files = {BandId(k): v for k, v in d.get("band_files", {}).items()}
        except ValueError as exc:
            raise ManifestError(f"entry {d.get('id')!r}: {exc}") from None
        try:
            return cls(
                id=d["id"],
                event_date=d["event_date"],
                band_files=band_files,
                landcover_file=d["landcover_file"],
                cloud_file=d["cloud_file"],
                delineation_file=d.get("delineation_file"),
                severity_file=d.get("severity_file"),
                valid_d_file=d.get("valid_d_file"),
                valid_lc_file=d.get("valid_lc_file"),
                landcover_taxonomy=d.get("landcover_taxonomy", TAXONOMY_WORLDCOVER),
                aoi_bounds=d.get("aoi_bounds", {}),
            )
        except KeyError as exc:
            raise ManifestError(f"entry missing required key {exc}") from None


@dataclass
class DatasetManifest:
    entries: list[SceneEntry]
    splits: dict[str, list[str]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate scene ids {dupes}")
        known = set(ids)
        if self.splits:
            unknown_names = set(self.splits) - set(SPLIT_NAMES)
            if unknown_names:
                raise ManifestError(f"unknown split names {sorted(unknown_names)}")
            seen: dict[str, str] = {}
            for name, members in self.splits.items():
                for sid in members:
                    if sid not in known:
                        raise ManifestError(f"split {name!r} references unknown id {sid!r}")
                    if sid in seen:
                        raise ManifestError(
                            f"id {sid!r} appears in splits {seen[sid]!r} and {name!r}")
                    seen[sid] = name
            if len(seen) != len(known):
                missing = sorted(known - set(seen))
                raise ManifestError(f"ids not assigned to any split: {missing}")

    def entry(self, scene_id: str) -> SceneEntry:
        for e in self.entries:
            if e.id == scene_id:
                return e
        raise ManifestError(f"no entry with id {scene_id!r}")

    def split_ids(self, name: str) -> list[str]:
        if name not in SPLIT_NAMES:
            raise ManifestError(f"unknown split {name!r}")
        return list(self.splits.get(name, []))

    def to_dict(self) -> dict:
        d: dict = {"entries": [e.to_dict() for e in self.entries],
                   "splits": {k: list(v) for k, v in self.splits.items()}}
        if self.meta:
            d["meta"] = self.meta
        return d

    def save(self, path: str) -> None:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)

    @classmethod
    def load(cls, path: str) -> "DatasetManifest":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"manifest is not valid JSON: {exc}") from None
        if not isinstance(d, dict) or "entries" not in d:
            raise ManifestError("manifest must be an object with an 'entries' field")
        entries = [SceneEntry.from_dict(e) for e in d["entries"]]
        return cls(entries=entries, splits=d.get("splits", {}), meta=d.get("meta", {}))


def split_manifest(manifest: DatasetManifest, train_fraction: float,
                   val_fraction: float, seed: int) -> DatasetManifest:
    """Assign every entry to train/val/test.

    Counts come from flooring n * fraction per split; leftover entries go
    to train, then val, then test. Shuffle order is fixed by the seed.
    """
    n = len(manifest.entries)
    if n < 3:
        raise SplitError(f"need at least 3 entries to split, got {n}")
    test_fraction = 1.0 - train_fraction - val_fraction
    if min(train_fraction, val_fraction, test_fraction) <= 0:
        raise SplitError(
            f"fractions ({train_fraction}, {val_fraction}, {test_fraction:.6g}) "
            "must all be positive")

    # the tiny epsilon absorbs float artifacts like 1 - 0.8 - 0.1 != 0.1
    counts = [math.floor(n * train_fraction + 1e-9), math.floor(n * val_fraction + 1e-9),
              math.floor(n * test_fraction + 1e-9)]
    i = 0
    while sum(counts) < n:
        counts[i % 3] += 1
        i += 1
    if min(counts) < 1:
        raise SplitError(f"split sizes {counts} leave an empty split for n={n}")

    ids = [e.id for e in manifest.entries]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    shuffled = [ids[int(k)] for k in order]
    splits = {
        "train": sorted(shuffled[:counts[0]]),
        "val": sorted(shuffled[counts[0]:counts[0] + counts[1]]),
        "test": sorted(shuffled[counts[0] + counts[1]:]),
    }
    meta = dict(manifest.meta)
    meta["split"] = {"rng": RNG_ALGORITHM, "seed": seed,
                     "train_fraction": train_fraction, "val_fraction": val_fraction}
    return DatasetManifest(entries=list(manifest.entries), splits=splits, meta=meta)


@dataclass
class Scene:
    """A loaded scene: reflectance bands at their file resolutions plus labels.

    Bands are float64 reflectance in [0, 1]. Label rasters live on the
    10 m grid. The land cover raster's kind tells downstream code whether
    class codes still need remapping.
    """

    id: str
    event_date: str
    bands: dict[BandId, Grid2D]
    landcover: LabelRaster
    cloud: LabelRaster
    delineation: LabelRaster | None = None
    severity: LabelRaster | None = None
    valid_d: LabelRaster | None = None
    valid_lc: LabelRaster | None = None
    georef: GeoRef | None = None
    pixel_size: float = 10.0
    band_factors: dict[BandId, int] = field(default_factory=dict)

    @property
    def label_shape(self) -> tuple[int, int]:
        return self.cloud.shape

    def band_factor(self, bid: BandId) -> int:
        """Resolution factor of a band's grid relative to the label grid."""
        if bid in self.band_factors:
            return self.band_factors[bid]
        return bid.native_resolution // 10


def _read_label(path: str, kind: str, expected_shape: tuple[int, int] | None) -> LabelRaster:
    img = read_tiff(path)
    if img.data.ndim != 2 or img.data.dtype != np.uint8:
        raise LabelDomainError(f"{path} is not a single-band uint8 raster")
    if expected_shape is not None and img.data.shape != expected_shape:
        raise ShapeConsistencyError(
            f"{path}: shape {img.data.shape} does not match scene grid {expected_shape}")
    return LabelRaster(Grid2D(img.data), kind)


def _band_factor(pixel_size: float, scene_pixel_size: float, path: str) -> int:
    ratio = pixel_size / scene_pixel_size
    factor = round(ratio)
    if factor < 1 or abs(ratio - factor) > 1e-6:
        raise ShapeConsistencyError(
            f"{path}: pixel size {pixel_size} is not an integer multiple "
            f"of the scene grid ({scene_pixel_size})")
    return factor


def load_scene(manifest: DatasetManifest, scene_id: str, base_dir: str,
               bands: tuple[BandId, ...] = ALL_BANDS) -> Scene:
    """Read one scene's rasters, validating shapes against the 10 m grid.

    Every requested band must be present in the entry and each band file
    must cover the AoI at the resolution its georeferencing declares
    (ceil-divided for coarse bands).
    """
    entry = manifest.entry(scene_id)
    missing = [b.value for b in bands if b not in entry.band_files]
    if missing:
        raise IncompleteSceneError(
            f"scene {scene_id!r} is missing bands {missing}", missing=missing)

    def resolve(rel: str) -> str:
        return os.path.join(base_dir, rel)

    cloud = _read_label(resolve(entry.cloud_file), "cloud", None)
    shape = cloud.shape
    lc_kind = ("landcover" if entry.landcover_taxonomy == TAXONOMY_CONTIGUOUS
               else "worldcover")
    landcover = _read_label(resolve(entry.landcover_file), lc_kind, shape)
    delineation = severity = valid_d = valid_lc = None
    if entry.delineation_file:
        delineation = _read_label(resolve(entry.delineation_file), "delineation", shape)
    if entry.severity_file:
        severity = _read_label(resolve(entry.severity_file), "severity", shape)
    if entry.valid_d_file:
        valid_d = _read_label(resolve(entry.valid_d_file), "validity", shape)
    if entry.valid_lc_file:
        valid_lc = _read_label(resolve(entry.valid_lc_file), "validity", shape)

    scene_ps = 10.0
    height, width = shape
    georef = None
    loaded: dict[BandId, Grid2D] = {}
    factors: dict[BandId, int] = {}
    for bid in bands:
        path = resolve(entry.band_files[bid])
        img = read_tiff(path)
        if img.data.ndim != 2 or img.data.dtype != np.uint16:
            raise ShapeConsistencyError(f"{path} is not a single-band uint16 raster")
        if img.georef is not None:
            factor = _band_factor(img.georef.pixel_size_x, scene_ps, path)
            if georef is None and factor == 1:
                georef = img.georef
        else:
            factor = bid.native_resolution // 10
        expected = (math.ceil(height / factor), math.ceil(width / factor))
        if img.data.shape != expected:
            raise ShapeConsistencyError(
                f"{path}: shape {img.data.shape} does not match expected {expected} "
                f"for a 1:{factor} band over a {height}x{width} AoI")
        loaded[bid] = Grid2D(reflectance_from_dn(img.data))
        factors[bid] = factor

    return Scene(id=entry.id, event_date=entry.event_date, bands=loaded,
                 landcover=landcover, cloud=cloud, delineation=delineation,
                 severity=severity, valid_d=valid_d, valid_lc=valid_lc,
                 georef=georef, pixel_size=scene_ps, band_factors=factors)


def _scaled_georef(georef: GeoRef | None, factor: int) -> GeoRef | None:
    if georef is None:
        return None
    return GeoRef(origin_x=georef.origin_x, origin_y=georef.origin_y,
                  pixel_size_x=georef.pixel_size_x * factor,
                  pixel_size_y=georef.pixel_size_y * factor,
                  crs_code=georef.crs_code)


def write_scene_files(out_dir: str, scene_id: str,
                      band_dn: dict[BandId, tuple[np.ndarray, int]],
                      labels: dict[str, np.ndarray],
                      georef: GeoRef | None,
                      event_date: str,
                      landcover_taxonomy: str = TAXONOMY_WORLDCOVER,
                      label_shape: tuple[int, int] | None = None) -> SceneEntry:
    """Write one scene's rasters under out_dir/scene_id and build its entry.

    `band_dn` maps band id to (uint16 digital numbers, resolution factor
    relative to the 10 m grid); `labels` maps file stem (delineation,
    severity, landcover, cloud, valid_d, valid_lc) to uint8 arrays on the
    10 m grid.
    """
    scene_dir = os.path.join(out_dir, scene_id)
    os.makedirs(scene_dir, exist_ok=True)
    if label_shape is None:
        label_shape = next(iter(labels.values())).shape

    band_files = {}
    for bid, (dn, factor) in band_dn.items():
        if dn.dtype != np.uint16:
            raise ShapeConsistencyError(f"band {bid.value} digital numbers must be uint16")
        expected = (math.ceil(label_shape[0] / factor), math.ceil(label_shape[1] / factor))
        if dn.shape != expected:
            raise ShapeConsistencyError(
                f"band {bid.value}: shape {dn.shape} does not match factor {factor} "
                f"over a {label_shape[0]}x{label_shape[1]} AoI")
        rel = os.path.join(scene_id, f"{bid.value}.tif")
        write_tiff(os.path.join(out_dir, rel),
                   TiffImage(dn, georef=_scaled_georef(georef, factor)))
        band_files[bid] = rel

    paths: dict[str, str] = {}
    for stem, arr in labels.items():
        if arr is None:
            continue
        rel = os.path.join(scene_id, f"{stem}.tif")
        write_tiff(os.path.join(out_dir, rel),
                   TiffImage(arr.astype(np.uint8), georef=georef))
        paths[stem] = rel

    bounds = georef.bounds(*label_shape) if georef is not None else {}
    return SceneEntry(
        id=scene_id,
        event_date=event_date,
        band_files=band_files,
        landcover_file=paths["landcover"],
        cloud_file=paths["cloud"],
        delineation_file=paths.get("delineation"),
        severity_file=paths.get("severity"),
        valid_d_file=paths.get("valid_d"),
        valid_lc_file=paths.get("valid_lc"),
        landcover_taxonomy=landcover_taxonomy,
        aoi_bounds=bounds,
    )

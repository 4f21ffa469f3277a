"""Deterministic synthetic Sentinel-2 scenes with burn scars.

A scene is built from a smoothed-noise land cover map, per-class mean
reflectance signatures, random-walk burn and cloud blobs, and shared
Gaussian noise. The pre-fire rendering is the identical scene without
the burn transform, so unburned pixels match bit for bit between the
pair.

Everything is driven by numpy's PCG64 generator; a scene is a pure
function of its config (seed included).
"""

from __future__ import annotations

import dataclasses
import datetime
import os
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .raster import (
    ALL_BANDS,
    BandId,
    GeoRef,
    Grid2D,
    LabelRaster,
    WORLDCOVER_CODES,
    dn_from_reflectance,
)
from .tiffio import TiffImage, write_tiff
from .sceneio import (
    DatasetManifest,
    RNG_ALGORITHM,
    Scene,
    SceneEntry,
    split_manifest,
    write_scene_files,
)

CLASS_NAMES = (
    "tree_cover", "shrubland", "grassland", "cropland", "built_up",
    "bare_sparse", "snow_ice", "water", "wetland", "mangroves", "moss_lichen",
)
N_CLASSES = len(CLASS_NAMES)

# which contiguous class ids count as vegetated (burnable with a strong
# spectral response)
VEGETATED_CLASSES = (0, 1, 2, 3, 8, 9, 10)

# mean surface reflectance per class, band order as ALL_BANDS
#                 B01   B02   B03   B04   B05   B06   B07   B08   B8A   B09   B11   B12
SPECTRAL_SIGNATURES = np.array([
    [0.030, 0.040, 0.060, 0.040, 0.080, 0.200, 0.260, 0.300, 0.320, 0.300, 0.140, 0.070],
    [0.050, 0.060, 0.090, 0.080, 0.120, 0.200, 0.240, 0.270, 0.290, 0.270, 0.200, 0.120],
    [0.050, 0.070, 0.100, 0.090, 0.140, 0.220, 0.260, 0.300, 0.320, 0.300, 0.240, 0.140],
    [0.050, 0.070, 0.110, 0.100, 0.150, 0.240, 0.280, 0.330, 0.350, 0.330, 0.220, 0.120],
    [0.120, 0.140, 0.160, 0.180, 0.200, 0.220, 0.230, 0.240, 0.250, 0.240, 0.260, 0.240],
    [0.140, 0.180, 0.220, 0.260, 0.300, 0.320, 0.330, 0.340, 0.350, 0.340, 0.400, 0.360],
    [0.800, 0.820, 0.800, 0.780, 0.760, 0.740, 0.720, 0.700, 0.680, 0.600, 0.200, 0.120],
    [0.060, 0.050, 0.040, 0.030, 0.020, 0.015, 0.012, 0.010, 0.010, 0.008, 0.005, 0.004],
    [0.040, 0.050, 0.080, 0.060, 0.100, 0.180, 0.220, 0.260, 0.280, 0.260, 0.120, 0.060],
    [0.030, 0.040, 0.060, 0.040, 0.070, 0.180, 0.240, 0.280, 0.300, 0.280, 0.100, 0.050],
    [0.060, 0.080, 0.110, 0.100, 0.130, 0.180, 0.210, 0.240, 0.260, 0.240, 0.220, 0.140],
], dtype=np.float64)

# multiplicative per-band burn response: NIR collapses, SWIR brightens,
# shorter wavelengths darken slightly
BURN_FACTORS = np.array(
    [0.90, 0.90, 0.90, 0.90, 0.85, 0.70, 0.55, 0.45, 0.45, 0.90, 1.60, 1.60],
    dtype=np.float64)

CLOUD_REFLECTANCE = 0.85


@dataclass
class SynthConfig:
    height: int = 512
    width: int = 512
    seed: int = 0
    burn_fraction: float = 0.05
    cloud_fraction: float = 0.05
    noise_sigma: float = 0.01
    class_field_smoothness: int = 48
    burn_blob_count: tuple[int, int] = (1, 3)
    cloud_blob_count: tuple[int, int] = (1, 3)
    origin_x: float = 300000.0
    origin_y: float = 4500000.0
    crs_code: int = 32632

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise ConfigError(f"scene must be at least 16x16, got "
                              f"{self.height}x{self.width}")
        if not 0.0 <= self.burn_fraction <= 0.5:
            raise ConfigError(f"burn fraction {self.burn_fraction} outside [0, 0.5]")
        if not 0.0 <= self.cloud_fraction <= 0.9:
            raise ConfigError(f"cloud fraction {self.cloud_fraction} outside [0, 0.9]")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be non-negative")
        if self.class_field_smoothness < 0:
            raise ConfigError("smoothness must be non-negative")


@dataclass
class SynthScene:
    """A generated scene pair plus its ground truth on the 10 m grid."""

    config: SynthConfig
    post: dict[BandId, np.ndarray]   # post-fire reflectance, float64 (H, W)
    pre: dict[BandId, np.ndarray]    # pre-fire reflectance
    landcover: np.ndarray            # contiguous class ids 0..10, uint8
    severity: np.ndarray             # {0, 1, 2, 3} uint8
    delineation: np.ndarray          # {0, 1} uint8
    cloud: np.ndarray                # {0, 1} uint8
    georef: GeoRef | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.landcover.shape


def _box_blur(a: np.ndarray, radius: int) -> np.ndarray:
    """Separable box filter with edge-truncated windows."""
    if radius == 0:
        return a
    out = a
    for axis in (0, 1):
        n = out.shape[axis]
        c = np.cumsum(out, axis=axis, dtype=np.float64)
        c = np.concatenate([np.zeros_like(np.take(c, [0], axis=axis)), c], axis=axis)
        hi = np.minimum(np.arange(n) + radius + 1, n)
        lo = np.maximum(np.arange(n) - radius, 0)
        sums = np.take(c, hi, axis=axis) - np.take(c, lo, axis=axis)
        counts = (hi - lo).astype(np.float64)
        shape = [1, 1]
        shape[axis] = n
        out = sums / counts.reshape(shape)
    return out


def _stamp_blobs(rng: np.random.Generator, shape: tuple[int, int],
                 target_px: int, count_range: tuple[int, int],
                 radius_range: tuple[int, int] = (4, 10)) -> np.ndarray:
    """Paint random-walk blobs until roughly target_px pixels are set."""
    mask = np.zeros(shape, dtype=bool)
    if target_px <= 0:
        return mask
    h, w = shape
    n_blobs = int(rng.integers(count_range[0], count_range[1] + 1))
    n_blobs = max(1, n_blobs)

    yy, xx = np.ogrid[: 2 * radius_range[1] + 1, : 2 * radius_range[1] + 1]

    def stamp(cy: int, cx: int, r: int) -> None:
        disk = (yy - radius_range[1]) ** 2 + (xx - radius_range[1]) ** 2 <= r * r
        y0, x0 = cy - radius_range[1], cx - radius_range[1]
        ys = slice(max(0, y0), min(h, y0 + disk.shape[0]))
        xs = slice(max(0, x0), min(w, x0 + disk.shape[1]))
        dys = slice(ys.start - y0, ys.stop - y0)
        dxs = slice(xs.start - x0, xs.stop - x0)
        mask[ys, xs] |= disk[dys, dxs]

    per_blob = target_px / n_blobs
    for _ in range(n_blobs):
        r = int(rng.integers(radius_range[0], radius_range[1] + 1))
        cy = int(rng.integers(0, h))
        cx = int(rng.integers(0, w))
        painted_before = int(mask.sum())
        steps = 0
        while int(mask.sum()) - painted_before < per_blob and steps < 10000:
            stamp(cy, cx, r)
            cy = int(np.clip(cy + rng.integers(-r, r + 1), 0, h - 1))
            cx = int(np.clip(cx + rng.integers(-r, r + 1), 0, w - 1))
            steps += 1
            if mask.sum() >= target_px:
                break
        if mask.sum() >= target_px:
            break
    return mask


def _erode(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] &= mask[:-1, :]
    out[:-1, :] &= mask[1:, :]
    out[:, 1:] &= mask[:, :-1]
    out[:, :-1] &= mask[:, 1:]
    out[0, :] = False
    out[-1, :] = False
    out[:, 0] = False
    out[:, -1] = False
    return out


def _interior_depth(mask: np.ndarray) -> np.ndarray:
    """How many erosion rounds each pixel survives (1 at the boundary)."""
    depth = np.zeros(mask.shape, dtype=np.int32)
    cur = mask.copy()
    while cur.any():
        depth[cur] += 1
        cur = _erode(cur)
    return depth


def _severity_from_depth(burn: np.ndarray) -> np.ndarray:
    """Grade burned pixels 1..3 by distance from the blob core."""
    depth = _interior_depth(burn)
    sev = np.zeros(burn.shape, dtype=np.uint8)
    if not burn.any():
        return sev
    maxd = depth.max()
    sev[burn] = 1
    sev[depth > maxd / 3.0] = 2
    sev[depth > 2.0 * maxd / 3.0] = 3
    sev[~burn] = 0
    return sev


def generate_scene(cfg: SynthConfig) -> SynthScene:
    """Render one scene pair from its config, deterministically."""
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    h, w = cfg.height, cfg.width

    fields = rng.standard_normal((N_CLASSES, h, w))
    for k in range(N_CLASSES):
        fields[k] = _box_blur(fields[k], cfg.class_field_smoothness)
    landcover = np.argmax(fields, axis=0).astype(np.uint8)

    burn = _stamp_blobs(rng, (h, w), int(round(cfg.burn_fraction * h * w)),
                        cfg.burn_blob_count)
    severity = _severity_from_depth(burn)
    delineation = (severity > 0).astype(np.uint8)

    cloud = _stamp_blobs(rng, (h, w), int(round(cfg.cloud_fraction * h * w)),
                         cfg.cloud_blob_count).astype(np.uint8)

    base = SPECTRAL_SIGNATURES[landcover]          # (H, W, 12)
    noise = rng.standard_normal((h, w, len(ALL_BANDS))) * cfg.noise_sigma

    pre_hw = np.clip(base + noise, 0.0, 1.0)
    post_base = base.copy()
    post_base[burn] = post_base[burn] * BURN_FACTORS
    post_hw = np.clip(post_base + noise, 0.0, 1.0)

    cloudy = cloud.astype(bool)
    pre_hw[cloudy] = CLOUD_REFLECTANCE
    post_hw[cloudy] = CLOUD_REFLECTANCE

    pre = {bid: np.ascontiguousarray(pre_hw[:, :, i]) for i, bid in enumerate(ALL_BANDS)}
    post = {bid: np.ascontiguousarray(post_hw[:, :, i]) for i, bid in enumerate(ALL_BANDS)}

    georef = GeoRef(origin_x=cfg.origin_x, origin_y=cfg.origin_y,
                    pixel_size_x=10.0, pixel_size_y=-10.0, crs_code=cfg.crs_code)
    return SynthScene(config=cfg, post=post, pre=pre, landcover=landcover,
                      severity=severity, delineation=delineation, cloud=cloud,
                      georef=georef)


def bandstack_from(arrays: dict[BandId, np.ndarray], georef: GeoRef | None = None):
    """Wrap per-band float64 arrays into a BandStack on the 10 m grid."""
    from .raster import BandStack

    return BandStack(bands={bid: Grid2D(a) for bid, a in arrays.items()},
                     pixel_size=10.0, georef=georef)


def scene_to_raw(synth: SynthScene, scene_id: str, event_date: str) -> Scene:
    """View a generated scene the way load_scene would present a raw one.

    Bands keep the 10 m grid (factor 1) and land cover carries source
    product codes, so prepare() exercises the same remap path as for
    scenes read from disk.
    """
    wc_codes = np.array(WORLDCOVER_CODES, dtype=np.uint8)[synth.landcover]
    return Scene(
        id=scene_id,
        event_date=event_date,
        bands={bid: Grid2D(a) for bid, a in synth.post.items()},
        landcover=LabelRaster(Grid2D(wc_codes), "worldcover"),
        cloud=LabelRaster(Grid2D(synth.cloud), "cloud"),
        delineation=LabelRaster(Grid2D(synth.delineation), "delineation"),
        severity=LabelRaster(Grid2D(synth.severity), "severity"),
        georef=synth.georef,
        band_factors={bid: 1 for bid in synth.post},
    )


def _native_dn(synth: SynthScene) -> dict[BandId, tuple[np.ndarray, int]]:
    """Digital numbers at per-band native resolution (top-left subsample)."""
    out = {}
    for bid, arr in synth.post.items():
        f = bid.native_resolution // 10
        out[bid] = (dn_from_reflectance(arr[::f, ::f]), f)
    return out


def _event_date(index: int) -> str:
    return (datetime.date(2021, 6, 1) + datetime.timedelta(days=index)).isoformat()


def generate_dataset(out_dir: str, n_scenes: int, base: SynthConfig,
                     train_fraction: float = 0.0, val_fraction: float = 0.0,
                     write_prefire: bool = False) -> DatasetManifest:
    """Generate scenes on disk plus their manifest.

    Scene i is seeded from (base.seed, i), so the dataset is a pure
    function of the base config. Band files land at native resolution;
    land cover files carry source product codes.
    """
    if n_scenes < 1:
        raise ConfigError("need at least one scene")
    entries = []
    for i in range(n_scenes):
        cfg = dataclasses.replace(base, seed=int(np.random.SeedSequence(
            entropy=base.seed, spawn_key=(i,)).generate_state(1)[0]))
        synth = generate_scene(cfg)
        scene_id = f"scene-{i:04d}"
        wc_codes = np.array(WORLDCOVER_CODES, dtype=np.uint8)[synth.landcover]
        labels = {
            "delineation": synth.delineation,
            "severity": synth.severity,
            "landcover": wc_codes,
            "cloud": synth.cloud,
        }
        entry = write_scene_files(out_dir, scene_id, _native_dn(synth), labels,
                                  georef=synth.georef, event_date=_event_date(i),
                                  label_shape=synth.shape)
        if write_prefire:
            pre_dir = os.path.join(out_dir, scene_id, "pre")
            os.makedirs(pre_dir, exist_ok=True)
            for bid, arr in synth.pre.items():
                f = bid.native_resolution // 10
                write_tiff(os.path.join(pre_dir, f"{bid.value}.tif"),
                           TiffImage(dn_from_reflectance(arr[::f, ::f])))
        entries.append(entry)

    meta = {"rng": RNG_ALGORITHM, "generator": {**asdict(base), "n_scenes": n_scenes}}
    manifest = DatasetManifest(entries=entries, splits={}, meta=meta)
    if train_fraction > 0.0:
        manifest = split_manifest(manifest, train_fraction, val_fraction, seed=base.seed)
    return manifest

"""Turn raw scenes into model-ready samples.

Pipeline per scene: bring every band to the 10 m grid, derive the binary
burn target, remap land cover to contiguous class ids, build the two
validity masks, reflect-pad small scenes up to the minimum tile side and
split oversized ones into near-equal sections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, LabelDomainError, ShapeConsistencyError
from .raster import (
    ALL_BANDS,
    BandId,
    GeoRef,
    Grid2D,
    IGNORE_VALUE,
    LabelRaster,
    WORLDCOVER_CODES,
    dn_from_reflectance,
)
from .sceneio import Scene, SceneEntry, TAXONOMY_CONTIGUOUS, write_scene_files

MIN_SIDE = 512
MAX_SIDE = 2500

# source product class code -> contiguous training id
LANDCOVER_REMAP = {code: i for i, code in enumerate(WORLDCOVER_CODES)}


def upsample_nearest(grid: Grid2D, factor: int) -> Grid2D:
    """Nearest-neighbour upsampling: out[r, c] = in[r // factor, c // factor]."""
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise DimensionError(f"upsample factor must be a positive integer, got {factor!r}")
    if factor == 1:
        return Grid2D(grid.data.copy())
    out = np.repeat(np.repeat(grid.data, factor, axis=0), factor, axis=1)
    return Grid2D(out)


def upsample_to(grid: Grid2D, factor: int, shape: tuple[int, int]) -> Grid2D:
    """Upsample and trim to a target shape.

    Coarse bands cover the AoI with ceil(side / factor) pixels, so the
    upsampled raster can overshoot by up to factor - 1 pixels per axis;
    the overshoot is cut off at the bottom/right.
    """
    up = upsample_nearest(grid, factor)
    if up.height < shape[0] or up.width < shape[1]:
        raise ShapeConsistencyError(
            f"grid {grid.shape} at factor {factor} covers {up.shape}, "
            f"smaller than target {shape}")
    if up.height - shape[0] >= factor or up.width - shape[1] >= factor:
        raise ShapeConsistencyError(
            f"grid {grid.shape} at factor {factor} overshoots target {shape} "
            "by a full coarse pixel; factor is wrong")
    return Grid2D(up.data[:shape[0], :shape[1]].copy())


def binarize_severity(severity: LabelRaster) -> LabelRaster:
    """Collapse burn severity {1, 2, 3} to 1; keep 0 and 255 as they are."""
    if severity.kind != "severity":
        raise LabelDomainError(f"expected severity raster, got {severity.kind!r}")
    src = severity.data
    out = np.empty_like(src)
    out[src == 0] = 0
    out[(src >= 1) & (src <= 3)] = 1
    out[src == IGNORE_VALUE] = IGNORE_VALUE
    return LabelRaster(Grid2D(out), "delineation")


def remap_landcover(raw) -> LabelRaster:
    """Map source land cover codes to contiguous ids 0..10.

    Accepts a LabelRaster, Grid2D or uint8 array. Any value without a
    table entry (255 included) comes out as 255.
    """
    if isinstance(raw, LabelRaster):
        if raw.kind == "landcover":
            return LabelRaster(Grid2D(raw.data.copy()), "landcover")
        data = raw.data
    elif isinstance(raw, Grid2D):
        data = raw.data
    else:
        data = np.asarray(raw)
    if data.dtype != np.uint8:
        raise LabelDomainError(f"land cover codes must be uint8, got {data.dtype}")
    lut = np.full(256, IGNORE_VALUE, dtype=np.uint8)
    for code, idx in LANDCOVER_REMAP.items():
        lut[code] = idx
    return LabelRaster(Grid2D(lut[data]), "landcover")


def _reflect_indices(n: int, pad_before: int, pad_after: int) -> np.ndarray:
    """Source index for every output position of a mirror pad.

    Mirrors about the edge pixels without repeating them, matching
    np.pad(mode="reflect"), but stays defined for pads longer than the
    input by folding the index into the 2n-2 reflection period.
    """
    pos = np.arange(-pad_before, n + pad_after)
    if n == 1:
        return np.zeros_like(pos)
    period = 2 * n - 2
    folded = np.mod(pos, period)
    return np.where(folded < n, folded, period - folded)


@dataclass
class PreparedSample:
    """Everything the model needs for one sample on the 10 m grid."""

    id: str
    band_ids: tuple[BandId, ...]
    x: np.ndarray            # (C, H, W) float64 reflectance
    y_d: np.ndarray          # (H, W) uint8 in {0, 1, 255}
    y_lc: np.ndarray         # (H, W) uint8 in {0..10, 255}
    valid_d: np.ndarray      # (H, W) bool
    valid_lc: np.ndarray     # (H, W) bool
    cloud: np.ndarray        # (H, W) uint8 in {0, 1}
    georef: GeoRef | None = None
    parent_id: str = ""
    offset: tuple[int, int] = (0, 0)
    parent_shape: tuple[int, int] = (0, 0)

    def __post_init__(self):
        shape = self.x.shape[1:]
        for name in ("y_d", "y_lc", "valid_d", "valid_lc", "cloud"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise DimensionError(
                    f"{name} shape {arr.shape} does not match bands {shape}")
        if self.x.shape[0] != len(self.band_ids):
            raise DimensionError(
                f"{self.x.shape[0]} channels vs {len(self.band_ids)} band ids")
        if not self.parent_id:
            self.parent_id = self.id
        if self.parent_shape == (0, 0):
            self.parent_shape = shape

    @property
    def shape(self) -> tuple[int, int]:
        return self.x.shape[1:]


def _pad_reflect(arr: np.ndarray, pads: tuple[tuple[int, int], tuple[int, int]]) -> np.ndarray:
    (t, b), (l, r) = pads
    ri = _reflect_indices(arr.shape[-2], t, b)
    ci = _reflect_indices(arr.shape[-1], l, r)
    return arr[..., ri[:, None], ci[None, :]]


def ensure_min_size(sample: PreparedSample, min_side: int = MIN_SIDE) -> PreparedSample:
    """Reflect-pad a sample so both sides reach min_side.

    The deficit is split as evenly as possible (extra pixel goes to the
    bottom/right). Padded pixels carry mirrored data but are invalid for
    both tasks, so they never contribute to losses or metrics.
    """
    h, w = sample.shape
    dh, dw = max(0, min_side - h), max(0, min_side - w)
    if dh == 0 and dw == 0:
        return sample
    top, left = dh // 2, dw // 2
    pads = ((top, dh - top), (left, dw - left))

    georef = sample.georef
    if georef is not None:
        georef = GeoRef(
            origin_x=georef.origin_x - georef.pixel_size_x * left,
            origin_y=georef.origin_y + abs(georef.pixel_size_y) * top,
            pixel_size_x=georef.pixel_size_x, pixel_size_y=georef.pixel_size_y,
            crs_code=georef.crs_code)

    interior = np.zeros((h + dh, w + dw), dtype=bool)
    interior[pads[0][0]:pads[0][0] + h, pads[1][0]:pads[1][0] + w] = True
    # the padded raster becomes its own mosaic parent; provenance into the
    # unpadded AoI is not tracked further
    return replace(
        sample,
        x=_pad_reflect(sample.x, pads),
        y_d=_pad_reflect(sample.y_d, pads),
        y_lc=_pad_reflect(sample.y_lc, pads),
        cloud=_pad_reflect(sample.cloud, pads),
        valid_d=_pad_reflect(sample.valid_d, pads) & interior,
        valid_lc=_pad_reflect(sample.valid_lc, pads) & interior,
        georef=georef,
        offset=(0, 0),
        parent_shape=(h + dh, w + dw),
    )


def _axis_sections(side: int, max_side: int) -> list[tuple[int, int]]:
    k = math.ceil(side / max_side)
    base, rem = divmod(side, k)
    sections = []
    start = 0
    for i in range(k):
        size = base + (1 if i < rem else 0)
        sections.append((start, size))
        start += size
    assert start == side
    return sections


def split_large_aoi(sample: PreparedSample, max_side: int = MAX_SIDE) -> list[PreparedSample]:
    """Cut a sample into a gapless grid of sections no larger than max_side.

    Sections along one axis differ in size by at most one pixel. A sample
    already within bounds comes back as a single-element list unchanged.
    """
    h, w = sample.shape
    if h <= max_side and w <= max_side:
        return [sample]
    rows = _axis_sections(h, max_side)
    cols = _axis_sections(w, max_side)
    out = []
    for i, (r0, rh) in enumerate(rows):
        for j, (c0, cw) in enumerate(cols):
            georef = None
            if sample.georef is not None:
                g = sample.georef
                georef = GeoRef(
                    origin_x=g.origin_x + g.pixel_size_x * c0,
                    origin_y=g.origin_y - abs(g.pixel_size_y) * r0,
                    pixel_size_x=g.pixel_size_x, pixel_size_y=g.pixel_size_y,
                    crs_code=g.crs_code)
            out.append(replace(
                sample,
                id=f"{sample.id}_r{i}c{j}" if len(rows) * len(cols) > 1 else sample.id,
                x=sample.x[:, r0:r0 + rh, c0:c0 + cw].copy(),
                y_d=sample.y_d[r0:r0 + rh, c0:c0 + cw].copy(),
                y_lc=sample.y_lc[r0:r0 + rh, c0:c0 + cw].copy(),
                cloud=sample.cloud[r0:r0 + rh, c0:c0 + cw].copy(),
                valid_d=sample.valid_d[r0:r0 + rh, c0:c0 + cw].copy(),
                valid_lc=sample.valid_lc[r0:r0 + rh, c0:c0 + cw].copy(),
                georef=georef,
                parent_id=sample.parent_id,
                offset=(sample.offset[0] + r0, sample.offset[1] + c0),
                parent_shape=sample.parent_shape,
            ))
    return out


def mosaic_sections(sections: list[PreparedSample]) -> PreparedSample:
    """Reassemble split sections back into their parent sample.

    Inverse of split_large_aoi for sections that tile the parent exactly.
    """
    if not sections:
        raise DimensionError("nothing to mosaic")
    parent_shape = sections[0].parent_shape
    parent_id = sections[0].parent_id
    c = sections[0].x.shape[0]
    x = np.zeros((c,) + parent_shape, dtype=np.float64)
    y_d = np.zeros(parent_shape, dtype=np.uint8)
    y_lc = np.zeros(parent_shape, dtype=np.uint8)
    cloud = np.zeros(parent_shape, dtype=np.uint8)
    valid_d = np.zeros(parent_shape, dtype=bool)
    valid_lc = np.zeros(parent_shape, dtype=bool)
    covered = np.zeros(parent_shape, dtype=bool)
    for s in sections:
        if s.parent_id != parent_id or s.parent_shape != parent_shape:
            raise DimensionError("sections come from different parents")
        r0, c0 = s.offset
        h, w = s.shape
        if r0 < 0 or c0 < 0 or r0 + h > parent_shape[0] or c0 + w > parent_shape[1]:
            raise DimensionError(f"section {s.id} falls outside its parent")
        if covered[r0:r0 + h, c0:c0 + w].any():
            raise DimensionError(f"section {s.id} overlaps another section")
        covered[r0:r0 + h, c0:c0 + w] = True
        x[:, r0:r0 + h, c0:c0 + w] = s.x
        y_d[r0:r0 + h, c0:c0 + w] = s.y_d
        y_lc[r0:r0 + h, c0:c0 + w] = s.y_lc
        cloud[r0:r0 + h, c0:c0 + w] = s.cloud
        valid_d[r0:r0 + h, c0:c0 + w] = s.valid_d
        valid_lc[r0:r0 + h, c0:c0 + w] = s.valid_lc
    if not covered.all():
        raise DimensionError("sections do not cover the parent completely")
    return PreparedSample(
        id=parent_id, band_ids=sections[0].band_ids, x=x, y_d=y_d, y_lc=y_lc,
        valid_d=valid_d, valid_lc=valid_lc, cloud=cloud,
        georef=sections[0].georef if parent_shape == sections[0].shape else None,
        parent_id=parent_id, offset=(0, 0), parent_shape=parent_shape)


def prepare(scene: Scene, bands: tuple[BandId, ...] | None = None,
            min_side: int = MIN_SIDE, max_side: int = MAX_SIDE) -> list[PreparedSample]:
    """Run the full preprocessing chain on one scene.

    Returns one sample per AoI section (usually exactly one). Preparing
    an already-prepared sample again is a no-op apart from copies.
    """
    order = tuple(bands) if bands is not None else tuple(scene.bands.keys())
    shape = scene.label_shape
    planes = []
    for bid in order:
        if bid not in scene.bands:
            raise ShapeConsistencyError(f"scene {scene.id!r} has no band {bid.value}")
        factor = scene.band_factor(bid)
        grid = scene.bands[bid]
        if grid.shape == shape:
            planes.append(grid.data)
        else:
            planes.append(upsample_to(grid, factor, shape).data)
    x = np.stack(planes, axis=0)

    if scene.delineation is not None:
        y_d = scene.delineation.data.copy()
    elif scene.severity is not None:
        y_d = binarize_severity(scene.severity).data
    else:
        raise ShapeConsistencyError(f"scene {scene.id!r} has no burn annotation")
    y_lc = remap_landcover(scene.landcover).data

    cloud = scene.cloud.data.copy()
    valid_d = cloud == 0
    valid_lc = (cloud == 0) & (y_lc != IGNORE_VALUE) & (y_d != 1)
    if scene.valid_d is not None:
        valid_d &= scene.valid_d.data.astype(bool)
    if scene.valid_lc is not None:
        valid_lc &= scene.valid_lc.data.astype(bool)

    sample = PreparedSample(
        id=scene.id, band_ids=order, x=x, y_d=y_d, y_lc=y_lc,
        valid_d=valid_d, valid_lc=valid_lc, cloud=cloud, georef=scene.georef,
        parent_id=scene.id, offset=(0, 0), parent_shape=shape)
    sample = ensure_min_size(sample, min_side)
    return split_large_aoi(sample, max_side)


def prepared_entry(out_dir: str, sample: PreparedSample,
                   event_date: str = "") -> SceneEntry:
    """Persist a prepared sample as scene files with contiguous land cover."""
    band_dn = {bid: (dn_from_reflectance(sample.x[c]), 1)
               for c, bid in enumerate(sample.band_ids)}
    labels = {
        "delineation": sample.y_d,
        "landcover": sample.y_lc,
        "cloud": sample.cloud,
        "valid_d": sample.valid_d.astype(np.uint8),
        "valid_lc": sample.valid_lc.astype(np.uint8),
    }
    return write_scene_files(out_dir, sample.id, band_dn, labels,
                             georef=sample.georef, event_date=event_date,
                             landcover_taxonomy=TAXONOMY_CONTIGUOUS,
                             label_shape=sample.shape)

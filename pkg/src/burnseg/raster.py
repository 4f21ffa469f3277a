"""Core raster types: grids, band stacks, label rasters, georeferencing."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping

import numpy as np

from .errors import BoundsError, DimensionError, LabelDomainError

# dtypes a Grid2D is allowed to carry
_ALLOWED_DTYPES = (np.float64, np.float32, np.uint16, np.uint8, np.bool_)


class BandId(str, Enum):
    """Sentinel-2 L2A band identifiers."""

    B01 = "B01"
    B02 = "B02"
    B03 = "B03"
    B04 = "B04"
    B05 = "B05"
    B06 = "B06"
    B07 = "B07"
    B08 = "B08"
    B8A = "B8A"
    B09 = "B09"
    B11 = "B11"
    B12 = "B12"

    @property
    def native_resolution(self) -> int:
        """Ground sampling distance in metres for the source product."""
        return _NATIVE_RESOLUTION[self]


_NATIVE_RESOLUTION = {
    BandId.B02: 10, BandId.B03: 10, BandId.B04: 10, BandId.B08: 10,
    BandId.B05: 20, BandId.B06: 20, BandId.B07: 20, BandId.B8A: 20,
    BandId.B11: 20, BandId.B12: 20,
    BandId.B01: 60, BandId.B09: 60,
}

ALL_BANDS: tuple[BandId, ...] = tuple(BandId)

# digital numbers are stored as reflectance * 10000 in the source products
REFLECTANCE_SCALE = 10000.0


@dataclass
class Grid2D:
    """A single-channel raster: a 2-D array in row-major order."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise DimensionError(f"grid must be 2-D, got shape {self.data.shape}")
        if self.data.size == 0:
            raise DimensionError("grid must contain at least one pixel")
        if not any(self.data.dtype == d for d in _ALLOWED_DTYPES):
            raise DimensionError(f"unsupported grid dtype {self.data.dtype}")
        if not self.data.flags.c_contiguous:
            self.data = np.ascontiguousarray(self.data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def crop(grid: Grid2D, top: int, left: int, height: int, width: int) -> Grid2D:
    """Copy a rectangular window out of a grid.

    The window must lie fully inside the grid; anything else raises
    BoundsError rather than silently clamping.
    """
    if height < 1 or width < 1:
        raise BoundsError(f"crop size must be positive, got {height}x{width}")
    if top < 0 or left < 0 or top + height > grid.height or left + width > grid.width:
        raise BoundsError(
            f"crop [{top}:{top + height}, {left}:{left + width}] outside "
            f"grid {grid.height}x{grid.width}"
        )
    return Grid2D(grid.data[top:top + height, left:left + width].copy())


def map_binary(a: Grid2D, b: Grid2D, op: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Grid2D:
    """Apply an elementwise binary operation to two same-shape grids."""
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return Grid2D(np.asarray(op(a.data, b.data)))


@dataclass
class GeoRef:
    """Affine georeferencing for a north-up raster."""

    origin_x: float
    origin_y: float
    pixel_size_x: float
    pixel_size_y: float
    crs_code: int = 0

    def __post_init__(self):
        if self.pixel_size_x <= 0 or self.pixel_size_y == 0:
            raise DimensionError(
                f"invalid pixel size ({self.pixel_size_x}, {self.pixel_size_y})"
            )

    def bounds(self, height: int, width: int) -> dict[str, float]:
        """Rectangle covered by a height x width raster at this georef."""
        south = self.origin_y - abs(self.pixel_size_y) * height
        return {
            "west": self.origin_x,
            "north": self.origin_y,
            "east": self.origin_x + self.pixel_size_x * width,
            "south": south,
            "crs_code": float(self.crs_code),
        }


# source land cover product class codes
WORLDCOVER_CODES = (10, 20, 30, 40, 50, 60, 70, 80, 90, 95, 100)

# value domains per label kind; 255 marks "unknown" where listed
LABEL_DOMAINS: dict[str, frozenset[int]] = {
    "delineation": frozenset({0, 1, 255}),
    "landcover": frozenset(range(11)) | {255},
    "worldcover": frozenset(WORLDCOVER_CODES) | {255},
    "severity": frozenset({0, 1, 2, 3, 255}),
    "cloud": frozenset({0, 1}),
    "validity": frozenset({0, 1}),
}

IGNORE_VALUE = 255


@dataclass
class LabelRaster:
    """A uint8 grid with a declared label kind and value domain."""

    grid: Grid2D
    kind: str

    def __post_init__(self):
        if self.kind not in LABEL_DOMAINS:
            raise LabelDomainError(f"unknown label kind {self.kind!r}")
        if self.grid.data.dtype != np.uint8:
            raise LabelDomainError(f"{self.kind} labels must be uint8, got {self.grid.data.dtype}")
        domain = LABEL_DOMAINS[self.kind]
        present = np.unique(self.grid.data)
        bad = [int(v) for v in present if int(v) not in domain]
        if bad:
            raise LabelDomainError(f"values {bad} outside {self.kind} domain")

    @property
    def data(self) -> np.ndarray:
        return self.grid.data

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape


@dataclass
class BandStack:
    """Reflectance bands on a common pixel grid.

    All grids are float64 reflectance in [0, 1] and share one shape.
    Band order follows insertion order of `bands`.
    """

    bands: dict[BandId, Grid2D]
    pixel_size: float = 10.0
    georef: GeoRef | None = None

    def __post_init__(self):
        if not self.bands:
            raise DimensionError("band stack must contain at least one band")
        if self.pixel_size <= 0:
            raise DimensionError(f"pixel size must be positive, got {self.pixel_size}")
        shapes = {g.shape for g in self.bands.values()}
        if len(shapes) > 1:
            raise DimensionError(f"bands disagree on shape: {sorted(shapes)}")
        for bid, g in self.bands.items():
            if g.data.dtype != np.float64:
                raise DimensionError(f"band {bid.value} must be float64, got {g.data.dtype}")

    @property
    def shape(self) -> tuple[int, int]:
        return next(iter(self.bands.values())).shape

    @property
    def band_ids(self) -> tuple[BandId, ...]:
        return tuple(self.bands.keys())

    def as_array(self, order: tuple[BandId, ...] | None = None) -> np.ndarray:
        """Stack selected bands into a (C, H, W) float64 array."""
        ids = order if order is not None else self.band_ids
        missing = [b.value for b in ids if b not in self.bands]
        if missing:
            raise DimensionError(f"bands not in stack: {missing}")
        return np.stack([self.bands[b].data for b in ids], axis=0)


def reflectance_from_dn(dn: np.ndarray) -> np.ndarray:
    """Scale uint16 digital numbers to float64 reflectance."""
    return np.asarray(dn, dtype=np.float64) / REFLECTANCE_SCALE


def dn_from_reflectance(refl: np.ndarray) -> np.ndarray:
    """Quantize reflectance back to uint16 digital numbers."""
    scaled = np.rint(np.clip(refl, 0.0, 1.0) * REFLECTANCE_SCALE)
    return scaled.astype(np.uint16)

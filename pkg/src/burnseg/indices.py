"""Spectral indices with explicit validity tracking.

Each index carries a boolean validity plane instead of letting NaN or
inf leak out of near-zero denominators. Invalid pixels hold 0.0 and
valid == False.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ConfigError, IncompleteSceneError
from .raster import BandId, BandStack, Grid2D, LabelRaster

DENOM_EPS = 1e-9
DNBR_DEFAULT_THRESHOLD = 0.27


def _band(stack: BandStack, bid: BandId) -> np.ndarray:
    if bid not in stack.bands:
        raise IncompleteSceneError(f"band stack is missing {bid.value}",
                                   missing=[bid.value])
    return stack.bands[bid].data


@dataclass
class IndexMap:
    """A computed index: float64 values plus per-pixel validity."""

    values: np.ndarray
    valid: np.ndarray
    kind: str

    def __post_init__(self):
        if self.values.shape != self.valid.shape:
            raise DimensionError(
                f"values {self.values.shape} vs valid {self.valid.shape}")
        if self.values.dtype != np.float64 or self.valid.dtype != np.bool_:
            raise DimensionError("index values must be float64 with a bool mask")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _finalize(values: np.ndarray, valid: np.ndarray, kind: str) -> IndexMap:
    out = np.where(valid, values, 0.0)
    return IndexMap(values=out, valid=valid, kind=kind)


def _ratio(num: np.ndarray, den: np.ndarray, kind: str) -> IndexMap:
    valid = np.abs(den) >= DENOM_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        values = num / den
    return _finalize(values, valid, kind)


def compute_nbr(stack: BandStack, swir: BandId = BandId.B12) -> IndexMap:
    """Normalized burn ratio (B08 - SWIR) / (B08 + SWIR).

    The SWIR band defaults to B12; B11 is the accepted alternative.
    """
    if swir not in (BandId.B11, BandId.B12):
        raise ConfigError(f"NBR SWIR band must be B11 or B12, got {swir.value}")
    nir = _band(stack, BandId.B08)
    sw = _band(stack, swir)
    return _ratio(nir - sw, nir + sw, "nbr")


def compute_ndvi(stack: BandStack) -> IndexMap:
    """Normalized difference vegetation index (B08 - B04) / (B08 + B04)."""
    nir = _band(stack, BandId.B08)
    red = _band(stack, BandId.B04)
    return _ratio(nir - red, nir + red, "ndvi")


def compute_bais2(stack: BandStack) -> IndexMap:
    """Burned area index for Sentinel-2.

    (1 - sqrt(B06 * B07 * B8A / B04)) * ((B12 - B8A) / sqrt(B12 + B8A) + 1)

    Pixels where B04 or B12 + B8A vanish, or where the radicand would be
    negative, are marked invalid.
    """
    b04 = _band(stack, BandId.B04)
    b06 = _band(stack, BandId.B06)
    b07 = _band(stack, BandId.B07)
    b8a = _band(stack, BandId.B8A)
    b12 = _band(stack, BandId.B12)

    sum_swir = b12 + b8a
    valid = (np.abs(b04) >= DENOM_EPS) & (sum_swir >= DENOM_EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        radicand = (b06 * b07 * b8a) / b04
        valid &= radicand >= 0.0
        left = 1.0 - np.sqrt(np.abs(radicand))
        right = (b12 - b8a) / np.sqrt(sum_swir) + 1.0
        values = left * right
    return _finalize(values, valid, "bais2")


def compute_dnbr(pre: BandStack, post: BandStack, swir: BandId = BandId.B12) -> IndexMap:
    """Pre-fire minus post-fire NBR; valid only where both inputs are."""
    if pre.shape != post.shape:
        raise DimensionError(f"pre {pre.shape} vs post {post.shape}")
    nbr_pre = compute_nbr(pre, swir)
    nbr_post = compute_nbr(post, swir)
    valid = nbr_pre.valid & nbr_post.valid
    return _finalize(nbr_pre.values - nbr_post.values, valid, "dnbr")


def threshold_classify(index: IndexMap, threshold: float,
                       polarity: str = "greater") -> LabelRaster:
    """Binarize an index map; invalid pixels always classify as 0."""
    if polarity == "greater":
        hit = index.values > threshold
    elif polarity == "less":
        hit = index.values < threshold
    else:
        raise ConfigError(f"polarity must be 'greater' or 'less', got {polarity!r}")
    out = (hit & index.valid).astype(np.uint8)
    return LabelRaster(Grid2D(out), "delineation")

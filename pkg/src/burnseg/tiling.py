"""Sliding-window tiling and seam-free recombination.

Tile positions walk the image at a fixed stride with one extra clamped
position per axis so the last row/column of pixels is always covered.
Overlapping predictions are averaged with an edge-tapered weight window
so tile seams do not show up in the output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, CoverageError, PlanError
from .preprocess import PreparedSample

DEFAULT_TILE_SIZE = 512
DEFAULT_STRIDE = 256
DEFAULT_TAPER_FRACTION = 0.25


def smoothstep(u):
    """Cubic smoothstep 3u^2 - 2u^3, clamped to [0, 1]."""
    u = np.clip(u, 0.0, 1.0)
    return 3.0 * u * u - 2.0 * u * u * u


def _axis_positions(side: int, tile: int, stride: int) -> list[int]:
    positions = list(range(0, side - tile + 1, stride))
    last = side - tile
    if positions[-1] != last:
        positions.append(last)
    return positions


def plan_tiles(height: int, width: int, tile_size: int = DEFAULT_TILE_SIZE,
               stride: int = DEFAULT_STRIDE) -> list[tuple[int, int]]:
    """Top-left corners of a covering tile grid, row-major order.

    The final position per axis is clamped to side - tile_size, so every
    pixel is covered and no tile pokes outside the image.
    """
    if tile_size < 1 or stride < 1:
        raise PlanError(f"tile size {tile_size} and stride {stride} must be positive")
    if stride > tile_size:
        raise PlanError(f"stride {stride} larger than tile {tile_size} would leave gaps")
    if tile_size > height or tile_size > width:
        raise PlanError(
            f"tile {tile_size} does not fit into a {height}x{width} image")
    rows = _axis_positions(height, tile_size, stride)
    cols = _axis_positions(width, tile_size, stride)
    return [(r, c) for r in rows for c in cols]


def blend_profile(tile_size: int, taper_fraction: float = DEFAULT_TAPER_FRACTION) -> np.ndarray:
    """1-D weight profile: smoothstep ramps at both ends, 1.0 between.

    Sampled at pixel centres so the outermost pixel still gets a
    positive weight; a zero there would leave border pixels of the image
    without any contribution.
    """
    if not 0.0 <= taper_fraction <= 0.5:
        raise PlanError(f"taper fraction {taper_fraction} outside [0, 0.5]")
    taper = int(round(taper_fraction * tile_size))
    profile = np.ones(tile_size, dtype=np.float64)
    if taper > 0:
        ramp = smoothstep((np.arange(taper) + 0.5) / taper)
        profile[:taper] = ramp
        profile[tile_size - taper:] = ramp[::-1]
    return profile


def make_blend_window(tile_size: int,
                      taper_fraction: float = DEFAULT_TAPER_FRACTION) -> np.ndarray:
    """Separable 2-D blend window (outer product of the 1-D profile)."""
    p = blend_profile(tile_size, taper_fraction)
    return np.outer(p, p)


def blend_tiles(tiles: list[tuple[int, int, np.ndarray]],
                out_shape: tuple[int, int],
                window: np.ndarray) -> np.ndarray:
    """Weighted-average recombination of overlapping tiles.

    `tiles` holds (top, left, values) with values shaped (th, tw) or
    (C, th, tw); accumulation follows list order. Every output pixel
    must be covered by at least one tile.

    The average is computed relative to a per-pixel reference taken from
    the first covering tile: out = ref + sum(w * (v - ref)) / sum(w).
    Mathematically this is the plain weighted mean, but when all tiles
    agree on a value the correction term is exactly zero, so constant
    inputs reconstruct without any rounding drift.
    """
    if not tiles:
        raise CoverageError("no tiles to blend")
    leading = tiles[0][2].shape[:-2]
    th, tw = window.shape

    ref = np.zeros(leading + out_shape, dtype=np.float64)
    covered = np.zeros(out_shape, dtype=bool)
    for top, left, values in tiles:
        if values.shape[:-2] != leading:
            raise BoundsError("tiles disagree on channel shape")
        if values.shape[-2:] != (th, tw):
            raise BoundsError(
                f"tile shape {values.shape[-2:]} does not match window {window.shape}")
        if top < 0 or left < 0 or top + th > out_shape[0] or left + tw > out_shape[1]:
            raise BoundsError(
                f"tile at ({top}, {left}) sticks out of {out_shape}")
        region = covered[top:top + th, left:left + tw]
        fresh = ~region
        if fresh.any():
            ref[..., top:top + th, left:left + tw][..., fresh] = values[..., fresh]
            region |= fresh
    if not covered.all():
        raise CoverageError(
            f"{int((~covered).sum())} pixels received no tile coverage")

    num = np.zeros(leading + out_shape, dtype=np.float64)
    den = np.zeros(out_shape, dtype=np.float64)
    for top, left, values in tiles:
        num[..., top:top + th, left:left + tw] += window * (
            values - ref[..., top:top + th, left:left + tw])
        den[top:top + th, left:left + tw] += window
    return ref + num / den


def sample_random_crop(sample: PreparedSample, crop: int,
                       rng: np.random.Generator) -> PreparedSample:
    """Draw a square crop with a uniformly random in-bounds corner."""
    h, w = sample.shape
    if crop < 1 or crop > h or crop > w:
        raise BoundsError(f"crop {crop} does not fit into {h}x{w}")
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    return crop_sample(sample, top, left, crop)


def crop_sample(sample: PreparedSample, top: int, left: int, crop: int) -> PreparedSample:
    """Cut a square window out of a prepared sample."""
    h, w = sample.shape
    if top < 0 or left < 0 or top + crop > h or left + crop > w:
        raise BoundsError(f"crop [{top}, {left}] + {crop} outside {h}x{w}")
    sl = (slice(top, top + crop), slice(left, left + crop))
    return PreparedSample(
        id=f"{sample.id}@{top},{left}",
        band_ids=sample.band_ids,
        x=sample.x[:, sl[0], sl[1]].copy(),
        y_d=sample.y_d[sl].copy(),
        y_lc=sample.y_lc[sl].copy(),
        valid_d=sample.valid_d[sl].copy(),
        valid_lc=sample.valid_lc[sl].copy(),
        cloud=sample.cloud[sl].copy(),
        georef=None,
        parent_id=sample.parent_id,
        offset=(sample.offset[0] + top, sample.offset[1] + left),
        parent_shape=sample.parent_shape,
    )

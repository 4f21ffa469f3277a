"""Masked losses for the two heads.

Both losses gather the valid pixels into a flat vector before reducing, so
pixels outside the mask contribute nothing at all, not even a zero term in
a running sum. Gradients come back at full spatial shape with zeros in the
masked-out positions.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, LabelDomainError
from ..raster import IGNORE_VALUE


def _check_mask(z: np.ndarray, y: np.ndarray, valid: np.ndarray) -> None:
    spatial = z.shape[0:1] + z.shape[2:]
    if y.shape != spatial or valid.shape != spatial:
        raise DimensionError(
            f"labels {y.shape} and mask {valid.shape} must match logits batch "
            f"and spatial shape {spatial}"
        )
    if valid.dtype != np.bool_:
        raise DimensionError(f"validity mask must be boolean, got {valid.dtype}")


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(
    z: np.ndarray, y: np.ndarray, valid: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on valid pixels, straight from logits.

    z is (N, 1, H, W); y is (N, H, W) uint8 in {0, 1, 255}; valid is a
    boolean mask of the same shape as y. Pixels labelled 255 are dropped on
    top of the mask. Uses the max(z,0) - z*y + log1p(exp(-|z|)) form so
    large logits never overflow. Returns (loss, dloss/dz); with no valid
    pixels the loss is 0.0 and the gradient all zeros.
    """
    if z.ndim != 4 or z.shape[1] != 1:
        raise DimensionError(f"expected (N, 1, H, W) logits, got shape {z.shape}")
    _check_mask(z, y, valid)
    bad = y[(y != 0) & (y != 1) & (y != IGNORE_VALUE)]
    if bad.size:
        raise LabelDomainError(f"binary labels must be 0, 1 or 255, found {bad[0]}")

    mask = valid & (y != IGNORE_VALUE)
    grad = np.zeros_like(z)
    n = int(mask.sum())
    if n == 0:
        return 0.0, grad

    zv = z[:, 0][mask]
    yv = y[mask].astype(np.float64)
    terms = np.maximum(zv, 0.0) - zv * yv + np.log1p(np.exp(-np.abs(zv)))
    loss = float(terms.sum() / n)
    grad[:, 0][mask] = (sigmoid(zv) - yv) / n
    return loss, grad


def softmax_cross_entropy(
    z: np.ndarray, y: np.ndarray, valid: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean multi-class cross-entropy on valid pixels.

    z is (N, K, H, W); y is (N, H, W) uint8 with class ids or 255. Returns
    (loss, dloss/dz). No valid pixels gives loss 0.0 and zero gradients.
    """
    if z.ndim != 4:
        raise DimensionError(f"expected (N, K, H, W) logits, got shape {z.shape}")
    _check_mask(z, y, valid)
    k = z.shape[1]
    mask = valid & (y != IGNORE_VALUE)
    if np.any(y[mask] >= k):
        raise LabelDomainError(
            f"class labels must be below {k} (or 255), found {int(y[mask].max())}"
        )

    grad = np.zeros_like(z)
    n = int(mask.sum())
    if n == 0:
        return 0.0, grad

    # Gather valid pixels into (M, K) rows.
    zm = np.moveaxis(z, 1, -1)[mask]
    ym = y[mask].astype(np.intp)
    zmax = zm.max(axis=1, keepdims=True)
    ez = np.exp(zm - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    logsumexp = zmax[:, 0] + np.log(sez[:, 0])
    picked = zm[np.arange(n), ym]
    loss = float((logsumexp - picked).sum() / n)

    grows = ez / sez
    grows[np.arange(n), ym] -= 1.0
    grows /= n
    gm = np.zeros(z.shape[0:1] + z.shape[2:] + (k,), dtype=np.float64)
    gm[mask] = grows
    grad[:] = np.moveaxis(gm, -1, 1)
    return loss, grad


def combined_loss(
    z_d: np.ndarray,
    y_d: np.ndarray,
    valid_d: np.ndarray,
    z_lc: np.ndarray | None,
    y_lc: np.ndarray | None,
    valid_lc: np.ndarray | None,
    lam: float,
) -> tuple[float, float, float, np.ndarray, np.ndarray | None]:
    """Total = delineation BCE + lam * land-cover CE.

    Returns (total, loss_d, loss_lc, grad_z_d, grad_z_lc). The land-cover
    pieces are None/0.0 when z_lc is None. The land-cover gradient is
    already scaled by lam, so with lam == 0 it is exactly zero.
    """
    loss_d, grad_d = bce_with_logits(z_d, y_d, valid_d)
    if z_lc is None:
        return loss_d, loss_d, 0.0, grad_d, None
    loss_lc, grad_lc = softmax_cross_entropy(z_lc, y_lc, valid_lc)
    total = loss_d + lam * loss_lc
    return float(total), loss_d, loss_lc, grad_d, lam * grad_lc

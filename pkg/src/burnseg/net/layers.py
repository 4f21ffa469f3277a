"""Layer primitives used by the segmentation network.

Everything is float64 and written against plain numpy. Forward functions
return the output plus whatever the matching backward function needs.
Convolution goes through an im2col buffer so the heavy lifting is a single
matmul; the backward pass rebuilds the buffer instead of caching it, which
trades a little compute for a lot of memory.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError


def _check_nchw(x: np.ndarray, name: str = "input") -> None:
    if x.ndim != 4:
        raise DimensionError(f"{name} must be 4-d (N, C, H, W), got shape {x.shape}")
    if x.dtype != np.float64:
        raise DimensionError(f"{name} must be float64, got {x.dtype}")


def _im2col3(
    xp: np.ndarray, height: int, width: int, buf: np.ndarray | None = None
) -> np.ndarray:
    """Unfold 3x3 neighbourhoods of a padded (N, C, H+2, W+2) array.

    Returns (N, C*9, H*W) with the kernel axis ordered (c, dy, dx) to match
    w.reshape(out_ch, in_ch * 9). A preallocated buffer of that shape can
    be passed in; fresh pages are expensive at these sizes, so reusing one
    buffer per layer saves a noticeable slice of the step time.
    """
    n, c = xp.shape[0], xp.shape[1]
    if buf is None:
        buf = np.empty((n, c * 9, height * width), dtype=np.float64)
    cols = buf.reshape(n, c, 3, 3, height, width)
    for dy in range(3):
        for dx in range(3):
            cols[:, :, dy, dx] = xp[:, :, dy : dy + height, dx : dx + width]
    return buf


def _col2im3(dcols: np.ndarray, n: int, c: int, height: int, width: int) -> np.ndarray:
    """Fold (N, C*9, H*W) gradients back onto the padded input, summing overlaps."""
    dcols = dcols.reshape(n, c, 3, 3, height, width)
    dxp = np.zeros((n, c, height + 2, width + 2), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            dxp[:, :, dy : dy + height, dx : dx + width] += dcols[:, :, dy, dx]
    return dxp


def conv3x3_forward(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray,
    return_cols: bool = False,
    cols_buf: np.ndarray | None = None,
):
    """Same-padded 3x3 convolution. x (N,C,H,W), w (O,C,3,3), b (O,).

    With return_cols the unfolded input buffer is handed back so the
    backward pass can reuse it instead of rebuilding it (a large share of
    the conv cost is that copy). cols_buf optionally supplies the buffer
    itself; the caller then owns its lifetime and must not let two live
    forward caches share it.
    """
    _check_nchw(x)
    n, c, h, wd = x.shape
    out_ch = w.shape[0]
    if w.shape != (out_ch, c, 3, 3):
        raise DimensionError(f"weight shape {w.shape} does not match input channels {c}")
    xp = np.zeros((n, c, h + 2, wd + 2), dtype=np.float64)
    xp[:, :, 1:-1, 1:-1] = x
    cols = _im2col3(xp, h, wd, buf=cols_buf)
    out = np.matmul(w.reshape(out_ch, c * 9), cols)
    out += b[:, None]
    out = out.reshape(n, out_ch, h, wd)
    if return_cols:
        return out, cols
    return out


def conv3x3_backward(
    x: np.ndarray,
    w: np.ndarray,
    gout: np.ndarray,
    cols: np.ndarray | None = None,
    need_dx: bool = True,
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients for conv3x3_forward. Returns (dx, dw, db).

    Pass the cols buffer from the forward call to skip rebuilding it.
    With need_dx=False the input gradient (useless for the first layer)
    is not computed and None is returned in its place.
    """
    n, c, h, wd = x.shape
    out_ch = w.shape[0]
    g2 = gout.reshape(n, out_ch, h * wd)
    if cols is None:
        xp = np.zeros((n, c, h + 2, wd + 2), dtype=np.float64)
        xp[:, :, 1:-1, 1:-1] = x
        cols = _im2col3(xp, h, wd)
    dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
    db = g2.sum(axis=(0, 2))
    dx = None
    if need_dx:
        dcols = np.matmul(w.reshape(out_ch, c * 9).T, g2)
        dxp = _col2im3(dcols, n, c, h, wd)
        dx = dxp[:, :, 1:-1, 1:-1]
    return dx, dw.reshape(w.shape), db


def conv1x1_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel linear map. x (N,C,H,W), w (O,C), b (O,)."""
    _check_nchw(x)
    n, c, h, wd = x.shape
    out = np.matmul(w, x.reshape(n, c, h * wd))
    out += b[:, None]
    return out.reshape(n, w.shape[0], h, wd)


def conv1x1_backward(
    x: np.ndarray, w: np.ndarray, gout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, c, h, wd = x.shape
    g2 = gout.reshape(n, gout.shape[1], h * wd)
    x2 = x.reshape(n, c, h * wd)
    dw = np.matmul(g2, x2.transpose(0, 2, 1)).sum(axis=0)
    db = g2.sum(axis=(0, 2))
    dx = np.matmul(w.T, g2).reshape(x.shape)
    return dx, dw, db


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, gout: np.ndarray) -> np.ndarray:
    return gout * (x > 0.0)


def maxpool2x2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pooling with stride 2. Returns (out, argmax) for the backward pass.

    Ties go to the first element in window scan order, which keeps the
    backward routing deterministic.
    """
    _check_nchw(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"pooling needs even spatial dims, got ({h}, {w})")
    windows = (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(idx: np.ndarray, gout: np.ndarray, in_shape: tuple) -> np.ndarray:
    n, c, h, w = in_shape
    g = np.zeros((n, c, h // 2, w // 2, 4), dtype=np.float64)
    np.put_along_axis(g, idx[..., None], gout[..., None], axis=-1)
    return (
        g.reshape(n, c, h // 2, w // 2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h, w)
    )


def upsample2x_forward(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour upsampling by 2 in both spatial axes."""
    _check_nchw(x)
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2x_backward(gout: np.ndarray) -> np.ndarray:
    n, c, h, w = gout.shape
    return gout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))

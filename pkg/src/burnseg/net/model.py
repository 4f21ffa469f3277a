"""Encoder-decoder segmentation network with an optional land-cover head.

The trunk is three conv+pool encoder stages, two upsample+skip decoder
stages, and a final upsample+conv that produces a 16-channel feature map at
input resolution. A 1x1 head turns the features into the burned-area logit;
in multi-task mode a second 1x1 head produces per-class land-cover logits.

Parameters live in a plain dict of float64 arrays keyed by layer name, so
the optimizer and checkpoint code can treat the model as a flat collection.
"""

from __future__ import annotations

import numpy as np

from ..errors import CacheError, ConfigError, DimensionError
from . import layers

ENCODER_CHANNELS = (16, 32, 64)
FEATURE_CHANNELS = 16
N_LANDCOVER_CLASSES = 11
MODES = ("stl", "mtl")

# Three pooling stages, so spatial dims must divide by this.
SIZE_MULTIPLE = 8


def _uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float64)


class MtlNetwork:
    """Burned-area segmentation network, single- or multi-task.

    ``mode="stl"`` has only the delineation head. ``mode="mtl"`` adds the
    land-cover head. The shared trunk and the delineation head are drawn
    from one seed stream and the land-cover head from a separate one, so
    the two modes start from bit-identical shared weights for a given seed.
    """

    def __init__(self, in_channels: int, mode: str = "mtl", seed: int = 0):
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        if in_channels < 1:
            raise ConfigError(f"in_channels must be positive, got {in_channels}")
        self.in_channels = int(in_channels)
        self.mode = mode
        self.seed = int(seed)
        self._version = 0
        self._forward_seq = 0
        self._buffers: dict[tuple, np.ndarray] = {}

        ss = np.random.SeedSequence(self.seed)
        shared_ss, lc_ss = ss.spawn(2)
        rng = np.random.default_rng(shared_ss)

        c1, c2, c3 = ENCODER_CHANNELS
        f = FEATURE_CHANNELS
        p: dict[str, np.ndarray] = {}
        p["enc1.w"] = _uniform_init(rng, (c1, in_channels, 3, 3), in_channels * 9)
        p["enc1.b"] = np.zeros(c1)
        p["enc2.w"] = _uniform_init(rng, (c2, c1, 3, 3), c1 * 9)
        p["enc2.b"] = np.zeros(c2)
        p["enc3.w"] = _uniform_init(rng, (c3, c2, 3, 3), c2 * 9)
        p["enc3.b"] = np.zeros(c3)
        # Decoder inputs are upsampled features concatenated with the skip.
        p["dec1.w"] = _uniform_init(rng, (c2, c3 + c3, 3, 3), (c3 + c3) * 9)
        p["dec1.b"] = np.zeros(c2)
        p["dec2.w"] = _uniform_init(rng, (c1, c2 + c2, 3, 3), (c2 + c2) * 9)
        p["dec2.b"] = np.zeros(c1)
        p["feat.w"] = _uniform_init(rng, (f, c1, 3, 3), c1 * 9)
        p["feat.b"] = np.zeros(f)
        p["head_d.w"] = _uniform_init(rng, (1, f), f)
        p["head_d.b"] = np.zeros(1)
        if mode == "mtl":
            rng_lc = np.random.default_rng(lc_ss)
            p["head_lc.w"] = _uniform_init(rng_lc, (N_LANDCOVER_CLASSES, f), f)
            p["head_lc.b"] = np.zeros(N_LANDCOVER_CLASSES)
        self.params = p

    # -- bookkeeping ------------------------------------------------------

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def mark_updated(self) -> None:
        """Invalidate caches produced before an in-place parameter change."""
        self._version += 1

    def _buffer(self, name: str, shape: tuple) -> np.ndarray:
        """Reusable per-layer im2col buffer; keyed by layer name and shape."""
        key = (name,) + shape
        buf = self._buffers.get(key)
        if buf is None:
            buf = np.empty(shape, dtype=np.float64)
            self._buffers[key] = buf
        return buf

    def release_buffers(self) -> None:
        self._buffers.clear()

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != 4:
            raise DimensionError(f"expected (N, C, H, W) input, got shape {x.shape}")
        if x.shape[1] != self.in_channels:
            raise DimensionError(
                f"network expects {self.in_channels} channels, got {x.shape[1]}"
            )
        if x.shape[2] % SIZE_MULTIPLE or x.shape[3] % SIZE_MULTIPLE:
            raise DimensionError(
                f"spatial dims must be multiples of {SIZE_MULTIPLE}, got {x.shape[2:]}"
            )
        if x.dtype != np.float64:
            raise DimensionError(f"input must be float64, got {x.dtype}")

    # -- forward / backward ----------------------------------------------

    def forward(self, x: np.ndarray, keep_cols: bool = True) -> dict:
        """Run the network and return a cache holding logits and intermediates.

        The cache is tagged with the current parameter version; backward()
        refuses a cache that predates the latest optimizer step. keep_cols
        retains the unfolded conv input buffers for the backward pass;
        inference paths turn it off to save memory.
        """
        self._check_input(x)
        p = self.params
        self._forward_seq += 1
        c: dict = {"x": x, "version": self._version, "seq": self._forward_seq}

        def conv(name, inp):
            n, ch = inp.shape[0], inp.shape[1]
            hw = inp.shape[2] * inp.shape[3]
            buf = self._buffer(name, (n, ch * 9, hw))
            out, cols = layers.conv3x3_forward(
                inp, p[f"{name}.w"], p[f"{name}.b"], return_cols=True, cols_buf=buf
            )
            if keep_cols:
                c[f"cols_{name}"] = cols
            return out

        c["z1"] = conv("enc1", x)
        c["a1"] = layers.relu_forward(c["z1"])
        c["p1"], c["idx1"] = layers.maxpool2x2_forward(c["a1"])

        c["z2"] = conv("enc2", c["p1"])
        c["a2"] = layers.relu_forward(c["z2"])
        c["p2"], c["idx2"] = layers.maxpool2x2_forward(c["a2"])

        c["z3"] = conv("enc3", c["p2"])
        c["a3"] = layers.relu_forward(c["z3"])
        c["p3"], c["idx3"] = layers.maxpool2x2_forward(c["a3"])

        u1 = layers.upsample2x_forward(c["p3"])
        c["c1"] = np.concatenate([u1, c["a3"]], axis=1)
        c["zd1"] = conv("dec1", c["c1"])
        c["d1"] = layers.relu_forward(c["zd1"])

        u2 = layers.upsample2x_forward(c["d1"])
        c["c2"] = np.concatenate([u2, c["a2"]], axis=1)
        c["zd2"] = conv("dec2", c["c2"])
        c["d2"] = layers.relu_forward(c["zd2"])

        c["u3"] = layers.upsample2x_forward(c["d2"])
        c["phi"] = conv("feat", c["u3"])

        c["z_d"] = layers.conv1x1_forward(c["phi"], p["head_d.w"], p["head_d.b"])
        if self.mode == "mtl":
            c["z_lc"] = layers.conv1x1_forward(c["phi"], p["head_lc.w"], p["head_lc.b"])
        return c

    def backward(
        self, cache: dict, gz_d: np.ndarray, gz_lc: np.ndarray | None = None
    ) -> dict[str, np.ndarray]:
        """Backpropagate head-logit gradients to every parameter.

        gz_lc is required in mtl mode (pass zeros to skip the auxiliary
        loss) and must be omitted in stl mode.
        """
        if cache.get("version") != self._version:
            raise CacheError(
                "forward cache is stale: parameters changed since it was built"
            )
        if cache.get("seq") != self._forward_seq:
            raise CacheError(
                "forward cache is stale: a newer forward pass on this network "
                "reused the layer buffers it points into"
            )
        if self.mode == "mtl" and gz_lc is None:
            raise ConfigError("mtl mode needs a land-cover logit gradient")
        if self.mode == "stl" and gz_lc is not None:
            raise ConfigError("stl mode has no land-cover head")

        p = self.params
        g: dict[str, np.ndarray] = {}

        dphi, g["head_d.w"], g["head_d.b"] = layers.conv1x1_backward(
            cache["phi"], p["head_d.w"], gz_d
        )
        if self.mode == "mtl":
            dphi_lc, g["head_lc.w"], g["head_lc.b"] = layers.conv1x1_backward(
                cache["phi"], p["head_lc.w"], gz_lc
            )
            dphi = dphi + dphi_lc

        def conv_bwd(name, inp, gout, need_dx=True):
            return layers.conv3x3_backward(
                inp, p[f"{name}.w"], gout,
                cols=cache.get(f"cols_{name}"), need_dx=need_dx,
            )

        du3, g["feat.w"], g["feat.b"] = conv_bwd("feat", cache["u3"], dphi)
        dd2 = layers.upsample2x_backward(du3)

        dzd2 = layers.relu_backward(cache["zd2"], dd2)
        dc2, g["dec2.w"], g["dec2.b"] = conv_bwd("dec2", cache["c2"], dzd2)
        c2_half = dc2.shape[1] // 2
        du2, da2_skip = dc2[:, :c2_half], dc2[:, c2_half:]
        dd1 = layers.upsample2x_backward(du2)

        dzd1 = layers.relu_backward(cache["zd1"], dd1)
        dc1, g["dec1.w"], g["dec1.b"] = conv_bwd("dec1", cache["c1"], dzd1)
        c1_half = dc1.shape[1] // 2
        du1, da3_skip = dc1[:, :c1_half], dc1[:, c1_half:]
        dp3 = layers.upsample2x_backward(du1)

        da3 = layers.maxpool2x2_backward(cache["idx3"], dp3, cache["a3"].shape)
        da3 = da3 + da3_skip
        dz3 = layers.relu_backward(cache["z3"], da3)
        dp2, g["enc3.w"], g["enc3.b"] = conv_bwd("enc3", cache["p2"], dz3)

        da2 = layers.maxpool2x2_backward(cache["idx2"], dp2, cache["a2"].shape)
        da2 = da2 + da2_skip
        dz2 = layers.relu_backward(cache["z2"], da2)
        dp1, g["enc2.w"], g["enc2.b"] = conv_bwd("enc2", cache["p1"], dz2)

        da1 = layers.maxpool2x2_backward(cache["idx1"], dp1, cache["a1"].shape)
        dz1 = layers.relu_backward(cache["z1"], da1)
        _, g["enc1.w"], g["enc1.b"] = conv_bwd("enc1", cache["x"], dz1, need_dx=False)
        return g

    def logits(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """Inference helper: (delineation logits, land-cover logits or None)."""
        cache = self.forward(x, keep_cols=False)
        return cache["z_d"], cache.get("z_lc")

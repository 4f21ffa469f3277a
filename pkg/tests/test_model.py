"""Whole-network behaviour: shapes, parameter accounting, gradient checks,
mode equivalence and cache staleness protection."""

import numpy as np
import pytest

from burnseg.errors import CacheError, ConfigError, DimensionError
from burnseg.net.losses import combined_loss
from burnseg.net.model import (
    ENCODER_CHANNELS,
    FEATURE_CHANNELS,
    N_LANDCOVER_CLASSES,
    SIZE_MULTIPLE,
    MtlNetwork,
)
from burnseg.net.optim import AdamWState, adamw_step


def _make_batch(rng, n=1, c=4, h=16, w=16):
    x = rng.uniform(0.0, 0.6, size=(n, c, h, w))
    y_d = (rng.random((n, h, w)) < 0.3).astype(np.uint8)
    y_lc = rng.integers(0, N_LANDCOVER_CLASSES, size=(n, h, w)).astype(np.uint8)
    v_d = rng.random((n, h, w)) < 0.9
    v_lc = rng.random((n, h, w)) < 0.9
    return x, y_d, y_lc, v_d, v_lc


def expected_param_count(in_channels, mode):
    c1, c2, c3 = ENCODER_CHANNELS
    f = FEATURE_CHANNELS
    total = 0
    for cout, cin in [(c1, in_channels), (c2, c1), (c3, c2),
                      (c2, 2 * c3), (c1, 2 * c2), (f, c1)]:
        total += cout * cin * 9 + cout
    total += 1 * f + 1
    if mode == "mtl":
        total += N_LANDCOVER_CLASSES * f + N_LANDCOVER_CLASSES
    return total


@pytest.mark.parametrize("in_channels", [4, 12])
@pytest.mark.parametrize("mode", ["stl", "mtl"])
def test_param_count_closed_form(in_channels, mode):
    net = MtlNetwork(in_channels, mode=mode, seed=0)
    assert net.param_count() == expected_param_count(in_channels, mode)


def test_head_is_the_only_difference():
    stl = MtlNetwork(12, mode="stl", seed=5)
    mtl = MtlNetwork(12, mode="mtl", seed=5)
    diff = mtl.param_count() - stl.param_count()
    assert diff == FEATURE_CHANNELS * N_LANDCOVER_CLASSES + N_LANDCOVER_CLASSES
    assert set(mtl.params) - set(stl.params) == {"head_lc.w", "head_lc.b"}
    # shared trunk + delineation head come out bit-identical for equal seed
    for k in stl.params:
        assert np.array_equal(stl.params[k], mtl.params[k]), k


def test_output_shapes():
    rng = np.random.default_rng(0)
    net = MtlNetwork(4, mode="mtl", seed=1)
    x = rng.uniform(size=(2, 4, 24, 32))
    z_d, z_lc = net.logits(x)
    assert z_d.shape == (2, 1, 24, 32)
    assert z_lc.shape == (2, N_LANDCOVER_CLASSES, 24, 32)
    stl = MtlNetwork(4, mode="stl", seed=1)
    z_d2, z_lc2 = stl.logits(x)
    assert z_d2.shape == (2, 1, 24, 32)
    assert z_lc2 is None


def test_input_validation():
    net = MtlNetwork(4, mode="stl", seed=0)
    with pytest.raises(DimensionError):
        net.forward(np.zeros((4, 16, 16)))  # missing batch dim
    with pytest.raises(DimensionError):
        net.forward(np.zeros((1, 3, 16, 16)))  # wrong channels
    with pytest.raises(DimensionError):
        net.forward(np.zeros((1, 4, 20, 16)))  # 20 % 8 != 0
    with pytest.raises(DimensionError):
        net.forward(np.zeros((1, 4, 16, 16), dtype=np.float32))
    with pytest.raises(ConfigError):
        MtlNetwork(4, mode="dual", seed=0)
    with pytest.raises(ConfigError):
        MtlNetwork(0, mode="stl", seed=0)


def test_seed_determinism():
    a = MtlNetwork(4, mode="mtl", seed=42)
    b = MtlNetwork(4, mode="mtl", seed=42)
    c = MtlNetwork(4, mode="mtl", seed=43)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    assert not np.array_equal(a.params["enc1.w"], c.params["enc1.w"])


def _loss_of(net, x, y_d, y_lc, v_d, v_lc, lam=1.0):
    cache = net.forward(x, keep_cols=False)
    z_lc = cache.get("z_lc")
    total, *_ = combined_loss(cache["z_d"], y_d, v_d, z_lc,
                              y_lc if z_lc is not None else None,
                              v_lc if z_lc is not None else None, lam)
    return total


def test_full_network_gradient_spot_check():
    """Finite differences on a random subset of every layer's parameters."""
    rng = np.random.default_rng(123)
    net = MtlNetwork(4, mode="mtl", seed=3)
    x, y_d, y_lc, v_d, v_lc = _make_batch(rng, h=16, w=16)

    cache = net.forward(x)
    total, _, _, gd, glc = combined_loss(
        cache["z_d"], y_d, v_d, cache["z_lc"], y_lc, v_lc, lam=1.0)
    grads = net.backward(cache, gd, glc)
    assert set(grads) == set(net.params)

    h = 1e-5
    checked = 0
    for name in sorted(net.params):
        p = net.params[name]
        flat_idx = rng.choice(p.size, size=min(4, p.size), replace=False)
        for fi in flat_idx:
            k = np.unravel_index(fi, p.shape)
            orig = p[k]
            p[k] = orig + h
            fp = _loss_of(net, x, y_d, y_lc, v_d, v_lc)
            p[k] = orig - h
            fm = _loss_of(net, x, y_d, y_lc, v_d, v_lc)
            p[k] = orig
            fd = (fp - fm) / (2 * h)
            a = grads[name][k]
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            assert rel < 1e-4, f"{name}{k}: analytic {a} vs fd {fd}"
            checked += 1
    assert checked > 60


def test_stl_equals_mtl_with_zero_lambda():
    """Training both modes from one seed with lam=0 must agree bit for bit."""
    rng = np.random.default_rng(9)
    stl = MtlNetwork(4, mode="stl", seed=11)
    mtl = MtlNetwork(4, mode="mtl", seed=11)
    opt_s = AdamWState(lr=1e-3)
    opt_m = AdamWState(lr=1e-3)

    for step in range(5):
        x, y_d, y_lc, v_d, v_lc = _make_batch(rng)
        cs = stl.forward(x)
        _, _, _, gd_s, _ = combined_loss(cs["z_d"], y_d, v_d, None, None, None, 0.0)
        gs = stl.backward(cs, gd_s)
        adamw_step(stl.params, gs, opt_s)
        stl.mark_updated()

        cm = mtl.forward(x)
        _, _, _, gd_m, glc_m = combined_loss(
            cm["z_d"], y_d, v_d, cm["z_lc"], y_lc, v_lc, 0.0)
        gm = mtl.backward(cm, gd_m, glc_m)
        adamw_step(mtl.params, gm, opt_m)
        mtl.mark_updated()

        assert np.array_equal(cs["z_d"], cm["z_d"]), f"logits differ at step {step}"
        for k in stl.params:
            assert np.array_equal(stl.params[k], mtl.params[k]), (step, k)


def test_backward_rejects_stale_cache_after_update():
    rng = np.random.default_rng(1)
    net = MtlNetwork(4, mode="stl", seed=0)
    x = rng.uniform(size=(1, 4, 16, 16))
    cache = net.forward(x)
    gz = rng.normal(size=cache["z_d"].shape)
    net.params["enc1.w"] += 0.01
    net.mark_updated()
    with pytest.raises(CacheError):
        net.backward(cache, gz)


def test_backward_rejects_cache_from_older_forward():
    # two forwards share pooled buffers; only the latest cache is usable
    rng = np.random.default_rng(2)
    net = MtlNetwork(4, mode="stl", seed=0)
    x1 = rng.uniform(size=(1, 4, 16, 16))
    x2 = rng.uniform(size=(1, 4, 16, 16))
    cache1 = net.forward(x1)
    cache2 = net.forward(x2)
    gz = np.zeros_like(cache1["z_d"])
    with pytest.raises(CacheError):
        net.backward(cache1, gz)
    net.backward(cache2, gz)  # latest cache still fine


def test_mode_head_gradient_contract():
    rng = np.random.default_rng(3)
    x = rng.uniform(size=(1, 4, 16, 16))
    stl = MtlNetwork(4, mode="stl", seed=0)
    c = stl.forward(x)
    with pytest.raises(ConfigError):
        stl.backward(c, np.zeros_like(c["z_d"]), np.zeros((1, 11, 16, 16)))
    mtl = MtlNetwork(4, mode="mtl", seed=0)
    c = mtl.forward(x)
    with pytest.raises(ConfigError):
        mtl.backward(c, np.zeros_like(c["z_d"]))


def test_size_multiple_constant():
    # three 2x poolings determine the divisibility constraint
    assert SIZE_MULTIPLE == 2 ** len(ENCODER_CHANNELS)

import numpy as np
import pytest

from burnseg.errors import CorruptFileError
from burnseg.net.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from burnseg.net.model import MtlNetwork
from burnseg.net.optim import AdamWState, adamw_step


def _trained_net(seed=4, steps=3):
    rng = np.random.default_rng(seed)
    net = MtlNetwork(4, mode="mtl", seed=seed)
    state = AdamWState(lr=2e-3, weight_decay=0.05)
    for _ in range(steps):
        grads = {k: rng.normal(size=v.shape) for k, v in net.params.items()}
        adamw_step(net.params, grads, state)
        net.mark_updated()
    return net, state, rng


def test_round_trip_everything(tmp_path):
    net, state, rng = _trained_net()
    path = str(tmp_path / "c.ckpt")
    rng_state = rng.bit_generator.state
    save_checkpoint(path, net, state, rng_state=rng_state,
                    extra={"epoch": 7, "history": [1.0, 0.5]})
    net2, state2, rng_state2, extra = load_checkpoint(path)

    assert net2.mode == net.mode
    assert net2.in_channels == net.in_channels
    assert set(net2.params) == set(net.params)
    for k in net.params:
        assert np.array_equal(net2.params[k], net.params[k]), k
        assert net2.params[k].dtype == np.float64
    assert state2.t == state.t
    assert state2.lr == state.lr
    assert state2.weight_decay == state.weight_decay
    for k in state.m:
        assert np.array_equal(state2.m[k], state.m[k])
        assert np.array_equal(state2.v[k], state.v[k])
    assert rng_state2 == rng_state
    assert extra == {"epoch": 7, "history": [1.0, 0.5]}


def test_loaded_network_predicts_identically(tmp_path):
    net, state, _ = _trained_net(seed=6)
    path = str(tmp_path / "c.ckpt")
    save_checkpoint(path, net, state)
    net2, _, _, _ = load_checkpoint(path)
    x = np.random.default_rng(0).uniform(size=(1, 4, 16, 16))
    z1, lc1 = net.logits(x)
    z2, lc2 = net2.logits(x)
    assert np.array_equal(z1, z2)
    assert np.array_equal(lc1, lc2)


def test_save_is_deterministic(tmp_path):
    net, state, rng = _trained_net(seed=1)
    p1, p2 = str(tmp_path / "1.ckpt"), str(tmp_path / "2.ckpt")
    rs = rng.bit_generator.state
    save_checkpoint(p1, net, state, rng_state=rs, extra={"a": 1})
    save_checkpoint(p2, net, state, rng_state=rs, extra={"a": 1})
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_fresh_optimizer_state_allowed(tmp_path):
    net = MtlNetwork(2, mode="stl", seed=0)
    path = str(tmp_path / "f.ckpt")
    save_checkpoint(path, net, AdamWState())
    net2, state2, rng_state, extra = load_checkpoint(path)
    assert state2.t == 0
    assert not state2.m
    assert rng_state is None
    assert extra == {}


def test_bad_magic(tmp_path):
    path = str(tmp_path / "x.ckpt")
    open(path, "wb").write(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(CorruptFileError):
        load_checkpoint(path)


def test_truncated_payload(tmp_path):
    net, state, _ = _trained_net()
    path = str(tmp_path / "t.ckpt")
    save_checkpoint(path, net, state)
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-200])
    with pytest.raises(CorruptFileError):
        load_checkpoint(path)


def test_truncated_header(tmp_path):
    path = str(tmp_path / "h.ckpt")
    open(path, "wb").write(MAGIC + b"\xff\xff\xff\xff\xff\xff\xff\x00")
    with pytest.raises(CorruptFileError):
        load_checkpoint(path)


def test_garbled_header_json(tmp_path):
    net, state, _ = _trained_net()
    path = str(tmp_path / "g.ckpt")
    save_checkpoint(path, net, state)
    blob = bytearray(open(path, "rb").read())
    blob[20] = ord("!")  # stomp a byte inside the JSON header
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CorruptFileError):
        load_checkpoint(path)

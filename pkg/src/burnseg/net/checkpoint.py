"""Single-file checkpoint format.

Layout: an 8-byte magic, a little-endian uint64 header length, a JSON
header, then the raw float64 array payloads back to back. The header
records network config, optimizer scalars, the data RNG state, training
history, and one descriptor per array (name, shape, byte offset into the
payload region). Arrays are stored sorted by name so a checkpoint written
twice from the same state is byte-identical.
"""

from __future__ import annotations

import json
import struct
from typing import Any

import numpy as np

from ..errors import CorruptFileError
from .model import MtlNetwork
from .optim import AdamWState

MAGIC = b"BRNSEGC1"
FORMAT_VERSION = 1


def _array_blocks(net: MtlNetwork, state: AdamWState) -> list[tuple[str, np.ndarray]]:
    blocks = [(f"params/{k}", v) for k, v in net.params.items()]
    blocks += [(f"adam_m/{k}", v) for k, v in state.m.items()]
    blocks += [(f"adam_v/{k}", v) for k, v in state.v.items()]
    return sorted(blocks, key=lambda kv: kv[0])


def save_checkpoint(
    path: str,
    net: MtlNetwork,
    state: AdamWState,
    rng_state: dict | None = None,
    extra: dict[str, Any] | None = None,
) -> None:
    """Write network + optimizer (+ anything JSON-able in extra) to path."""
    blocks = _array_blocks(net, state)
    descriptors = []
    offset = 0
    for name, arr in blocks:
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        descriptors.append(
            {"name": name, "shape": list(arr.shape), "offset": offset}
        )
        offset += arr.nbytes

    header = {
        "format_version": FORMAT_VERSION,
        "network": {
            "in_channels": net.in_channels,
            "mode": net.mode,
            "seed": net.seed,
        },
        "optimizer": {
            "lr": state.lr,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "weight_decay": state.weight_decay,
            "t": state.t,
        },
        "rng_state": rng_state,
        "arrays": descriptors,
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())


def load_checkpoint(path: str) -> tuple[MtlNetwork, AdamWState, dict | None, dict]:
    """Read a checkpoint back. Returns (net, optimizer state, rng_state, extra)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise CorruptFileError(f"{path}: too short to be a checkpoint")
    if data[:8] != MAGIC:
        raise CorruptFileError(f"{path}: bad magic {data[:8]!r}")
    (hlen,) = struct.unpack_from("<Q", data, 8)
    if 16 + hlen > len(data):
        raise CorruptFileError(f"{path}: header length {hlen} overruns the file")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: unreadable header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CorruptFileError(
            f"{path}: unsupported format version {header.get('format_version')!r}"
        )
    for key in ("network", "optimizer", "arrays"):
        if key not in header:
            raise CorruptFileError(f"{path}: header lacks {key!r} section")

    payload_start = 16 + hlen
    arrays: dict[str, np.ndarray] = {}
    try:
        descriptors = [(d["name"], tuple(d["shape"]), int(d["offset"]))
                       for d in header["arrays"]]
        cfg = header["network"]
        in_channels, mode, seed = cfg["in_channels"], cfg["mode"], cfg["seed"]
        opt = header["optimizer"]
    except (KeyError, TypeError) as exc:
        raise CorruptFileError(f"{path}: malformed header field: {exc}") from exc
    for name, shape, off in descriptors:
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        start = payload_start + off
        if start + nbytes > len(data):
            raise CorruptFileError(f"{path}: array {name} overruns the file")
        arrays[name] = (
            np.frombuffer(data[start : start + nbytes], dtype=np.float64)
            .reshape(shape)
            .copy()
        )

    net = MtlNetwork(in_channels, mode=mode, seed=seed)
    for key in net.params:
        name = f"params/{key}"
        if name not in arrays:
            raise CorruptFileError(f"{path}: missing array {name}")
        if arrays[name].shape != net.params[key].shape:
            raise CorruptFileError(
                f"{path}: array {name} has shape {arrays[name].shape}, "
                f"expected {net.params[key].shape}"
            )
        net.params[key] = arrays[name]

    try:
        state = AdamWState(
            lr=opt["lr"],
            beta1=opt["beta1"],
            beta2=opt["beta2"],
            eps=opt["eps"],
            weight_decay=opt["weight_decay"],
            t=opt["t"],
        )
    except (KeyError, TypeError) as exc:
        raise CorruptFileError(f"{path}: malformed optimizer section: {exc}") from exc
    for key in net.params:
        mname, vname = f"adam_m/{key}", f"adam_v/{key}"
        if mname in arrays:
            state.m[key] = arrays[mname]
        if vname in arrays:
            state.v[key] = arrays[vname]

    return net, state, header.get("rng_state"), header.get("extra", {})

"""Versioned binary checkpoints: config + parameters + optimizer state.

Layout: magic "OVCK", u32 version, u64 header length, JSON header, then
raw little-endian float64 blobs in header order (parameters, buffers,
optimizer moments).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import Module
from .models import ModelConfig, build_model
from .optim import Adam

MAGIC = b"OVCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _blob(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save_checkpoint(path, cfg: ModelConfig, model: Module, optimizer: Adam | None = None):
    params = list(model.named_parameters())
    buffers = list(model.named_buffers())
    header = {
        "config": cfg.to_dict(),
        "params": [{"name": n, "shape": list(p.data.shape)} for n, p in params],
        "buffers": [{"name": n, "shape": list(b.shape)} for n, b in buffers],
        "optimizer": None,
    }
    blobs = [_blob(p.data) for _, p in params] + [_blob(b) for _, b in buffers]
    if optimizer is not None:
        state = optimizer.state_dict()
        header["optimizer"] = {"t": state["t"], "lr": state["lr"]}
        blobs += [_blob(m) for m in state["m"]] + [_blob(v) for v in state["v"]]
    raw = json.dumps(header, sort_keys=True).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def load_checkpoint(path):
    """Returns (ModelConfig, params dict, buffers dict, optimizer header|None, moments|None)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(raw[16 : 16 + hlen])
    cfg = ModelConfig.from_dict(header["config"])
    off = 16 + hlen

    def take(shape):
        nonlocal off
        n = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += 8 * n
        return a

    params = {e["name"]: take(e["shape"]) for e in header["params"]}
    buffers = {e["name"]: take(e["shape"]) for e in header["buffers"]}
    moments = None
    if header["optimizer"] is not None:
        moments = {
            "m": [take(e["shape"]) for e in header["params"]],
            "v": [take(e["shape"]) for e in header["params"]],
        }
    return cfg, params, buffers, header["optimizer"], moments


def load_into(model: Module, params: dict, buffers: dict):
    own = dict(model.named_parameters())
    if set(own) != set(params):
        raise CheckpointError(
            f"parameter names mismatch: checkpoint has {sorted(set(params) - set(own))} "
            f"extra, model has {sorted(set(own) - set(params))} extra"
        )
    for name, p in own.items():
        if p.data.shape != params[name].shape:
            raise CheckpointError(f"{name}: shape {params[name].shape} != model {p.data.shape}")
        p.data[...] = params[name]
    own_buf = dict(model.named_buffers())
    if set(own_buf) != set(buffers):
        raise CheckpointError("buffer names mismatch")
    for name, b in own_buf.items():
        b[...] = buffers[name]


def load_model(path, expect_cfg: ModelConfig | None = None, seed: int = 0):
    """Rebuild the checkpointed model; reject a mismatched expected config."""
    cfg, params, buffers, _, _ = load_checkpoint(path)
    if expect_cfg is not None and expect_cfg != cfg:
        raise CheckpointError(
            f"checkpoint config {cfg.to_dict()} does not match requested {expect_cfg.to_dict()}"
        )
    model = build_model(cfg, seed)
    load_into(model, params, buffers)
    return model, cfg

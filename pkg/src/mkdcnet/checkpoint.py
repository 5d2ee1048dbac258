"""Checkpoint container format.

Little-endian layout: magic "MKDC", u32 version, u32 entry count, then per
entry [u16 name length, utf-8 name, tensor dump in the "MKDT" format], and
finally one JSON text block (model config, optimizer-state flag, training
state). Serialization is canonical (sorted keys, fixed separators) so two
identical runs produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .model import MKDCNet, ModelConfig, build_model
from .tensor import Tensor

CHECKPOINT_MAGIC = b"MKDC"
CHECKPOINT_VERSION = 1


def _to_4d(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 4:
        return arr
    if arr.ndim == 1:
        return arr.reshape(1, arr.shape[0], 1, 1)
    raise ValueError(f"cannot store array of ndim {arr.ndim}")


def write_checkpoint(path, entries: dict[str, np.ndarray], meta: dict) -> None:
    blobs = []
    for name in sorted(entries):
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"entry name too long: {name[:40]}...")
        t = Tensor(_to_4d(np.asarray(entries[name])).astype(np.float32))
        blobs.append(struct.pack("<H", len(raw)) + raw + t.to_bytes())
    header = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(blobs))
    trailer = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(header)
        for b in blobs:
            f.write(b)
        f.write(trailer)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        tensor, pos = Tensor.from_bytes(buf, pos)
        entries[name] = tensor.data
    meta = json.loads(buf[pos:].decode("utf-8"))
    return entries, meta


# ---------------------------------------------------------------------------
# model-level helpers
# ---------------------------------------------------------------------------

def save_model_checkpoint(path, model: MKDCNet, optimizer=None,
                          train_state: dict | None = None) -> None:
    entries: dict[str, np.ndarray] = {}
    for name, t in model.named_params().items():
        entries[name] = t.data
    for name, arr in model.named_buffers().items():
        entries[name] = arr
    if optimizer is not None:
        entries.update(optimizer.state_arrays())
    meta = {
        "model_config": asdict(model.cfg),
        "has_optimizer_state": optimizer is not None,
        "train_state": train_state or {},
    }
    if optimizer is not None:
        meta["optimizer"] = optimizer.state_meta()
    write_checkpoint(path, entries, meta)


def load_model_checkpoint(path) -> tuple[MKDCNet, dict[str, np.ndarray], dict]:
    """Rebuild the model from its stored config and load weights/buffers.

    Returns (model, optimizer_arrays, meta); optimizer arrays are empty when
    the checkpoint was saved without optimizer state.
    """
    entries, meta = read_checkpoint(path)
    cfg_dict = dict(meta["model_config"])
    cfg = ModelConfig(**cfg_dict)
    model = build_model(cfg)
    params = {}
    buffers = {}
    opt_arrays = {}
    buffer_names = set(model.named_buffers())
    param_names = set(model.named_params())
    for name, arr in entries.items():
        if name.startswith("opt."):
            opt_arrays[name] = arr
        elif name in buffer_names:
            buffers[name] = arr
        elif name in param_names:
            params[name] = arr
        else:
            raise ValueError(f"{path}: unexpected entry {name!r}")
    model.load_arrays(params, buffers)
    return model, opt_arrays, meta

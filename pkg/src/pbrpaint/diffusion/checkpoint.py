"""Versioned binary checkpoints.

Layout (little-endian):

    8 bytes   magic b"PBRCKPT\\0"
    u32       format version
    u32       header length, then that many bytes of UTF-8 JSON
              (kind, architecture, training config, step, RNG state, ...)
    u32       tensor count, then per tensor:
              u16 name length, name bytes, u8 ndim, u32 x ndim shape,
              float32 data in C order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .model import Denoiser, ModelConfig

MAGIC = b"PBRCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, header: dict, tensors: dict[str, torch.Tensor]) -> Path:
    path = Path(path)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        arr = np.ascontiguousarray(torch.as_tensor(t).detach().cpu().numpy(), dtype="<f4")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, torch.Tensor]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    tensors = {}
    for _ in range(n):
        (nl,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nl].decode("utf-8")
        off += nl
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return header, tensors


def optimizer_tensors(opt: torch.optim.Optimizer) -> tuple[dict, dict[str, torch.Tensor]]:
    """Flatten Adam-style per-parameter state into named tensors plus scalar metadata."""
    sd = opt.state_dict()
    tensors, meta = {}, {"param_groups": sd["param_groups"], "scalars": {}}
    for idx, st in sd["state"].items():
        for k, v in st.items():
            if torch.is_tensor(v) and v.dim() > 0:
                tensors[f"optim.{idx}.{k}"] = v
            else:
                meta["scalars"][f"{idx}.{k}"] = float(v)
    return meta, tensors


def restore_optimizer(opt: torch.optim.Optimizer, meta: dict, tensors: dict[str, torch.Tensor]):
    state: dict[int, dict] = {}
    for name, v in tensors.items():
        if name.startswith("optim."):
            _, idx, k = name.split(".", 2)
            state.setdefault(int(idx), {})[k] = v.clone()
    for key, v in meta.get("scalars", {}).items():
        idx, k = key.split(".", 1)
        state.setdefault(int(idx), {})[k] = torch.tensor(v)
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def save_model(path, model, kind: str, extra: Optional[dict] = None,
               optimizer: Optional[torch.optim.Optimizer] = None) -> Path:
    header = {"kind": kind, "architecture": model.config.to_dict()}
    header.update(extra or {})
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        meta, otensors = optimizer_tensors(optimizer)
        header["optimizer"] = meta
        tensors.update(otensors)
    return write_checkpoint(path, header, tensors)


def load_model(path, expect_kind: Optional[str] = None):
    """Returns ``(model, header, tensors)``; the model is in eval mode."""
    header, tensors = read_checkpoint(path)
    if expect_kind is not None and header.get("kind") != expect_kind:
        raise CheckpointError(f"{path}: expected a {expect_kind} checkpoint, found {header.get('kind')!r}")
    model = Denoiser(ModelConfig.from_dict(header["architecture"]))
    sd = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    model.load_state_dict(sd)
    model.eval()
    return model, header, tensors

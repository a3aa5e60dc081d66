"""Parameter container file.

Layout (all integers little-endian)::

    b"WCPARAMS"                 8-byte magic
    uint32 version              currently 1
    uint64 header_len
    header                      UTF-8 JSON, keys sorted:
                                  {"meta": {...},
                                   "sha256": hex digest of the data section,
                                   "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    data                        row-major tensor bytes, concatenated in header order

Floating-point tensors are stored as float32 unless ``keep_dtype`` is set
(used for float64 checks and integer/byte state such as RNG snapshots).
Names are stable hierarchical strings such as ``double_blocks.0.txt_attn.q.weight``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"WCPARAMS"
VERSION = 1

_DTYPES = {
    "float32": (np.float32, torch.float32),
    "float64": (np.float64, torch.float64),
    "int64": (np.int64, torch.int64),
    "uint8": (np.uint8, torch.uint8),
}


class ContainerIntegrityError(RuntimeError):
    pass


def _to_numpy(t: torch.Tensor, keep_dtype: bool) -> np.ndarray:
    t = t.detach().cpu()
    if t.is_floating_point() and not keep_dtype:
        t = t.to(torch.float32)
    arr = t.contiguous().numpy()
    name = arr.dtype.name
    if name not in _DTYPES:
        raise TypeError(f"unsupported dtype {name}")
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def save_tensors(path: str | os.PathLike, tensors: dict[str, torch.Tensor], meta: dict | None = None, keep_dtype: bool = False) -> None:
    entries, chunks, offset = [], [], 0
    for name, t in tensors.items():
        arr = _to_numpy(t, keep_dtype)
        raw = arr.tobytes(order="C")
        entries.append({"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    data = b"".join(chunks)
    header = json.dumps(
        {"meta": meta or {}, "sha256": hashlib.sha256(data).hexdigest(), "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        fh.write(data)
    os.replace(tmp, path)


def load_tensors(path: str | os.PathLike) -> tuple[dict[str, torch.Tensor], dict]:
    blob = Path(path).read_bytes()
    if len(blob) < 20 or blob[:8] != MAGIC:
        raise ContainerIntegrityError(f"{path}: not a parameter container (bad magic)")
    version, header_len = struct.unpack("<IQ", blob[8:20])
    if version != VERSION:
        raise ContainerIntegrityError(f"{path}: unsupported container version {version}")
    if 20 + header_len > len(blob):
        raise ContainerIntegrityError(f"{path}: truncated header")
    try:
        header = json.loads(blob[20 : 20 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerIntegrityError(f"{path}: corrupted header") from exc
    data = blob[20 + header_len :]
    if hashlib.sha256(data).hexdigest() != header.get("sha256"):
        raise ContainerIntegrityError(f"{path}: data checksum mismatch (truncated or corrupted file)")
    tensors = {}
    for e in header["tensors"]:
        np_dtype, _ = _DTYPES[e["dtype"]]
        raw = data[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(np_dtype).newbyteorder("<")).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.astype(np_dtype, copy=True))
    return tensors, header["meta"]


def save_model(path, model, extra_meta: dict | None = None) -> None:
    meta = {"kind": "model", "model_config": model.config.to_dict(), "model_config_hash": model.config.config_hash()}
    meta.update(extra_meta or {})
    save_tensors(path, dict(model.state_dict()), meta)


def load_model(path, dtype=torch.float32):
    from .config import ModelConfig
    from .model import FlowDiT

    tensors, meta = load_tensors(path)
    if meta.get("kind") != "model":
        raise ContainerIntegrityError(f"{path}: not a model parameter file (kind={meta.get('kind')!r})")
    config = ModelConfig.from_dict(meta["model_config"])
    model = FlowDiT(config)
    model.load_state_dict({k: v.to(dtype) for k, v in tensors.items()})
    return model.to(dtype)

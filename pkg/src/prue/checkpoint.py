"""PRUE checkpoint container.

Layout::

    b"PRUE" | version byte 0x01 | uint32 LE header length | UTF-8 JSON header | buffers

The header holds the architecture spec, the parameter dtype, free-form
metadata and a manifest ``name -> {shape, dtype, offset, nbytes}``; offsets
are relative to the first byte after the header.  Buffers are raw
little-endian values.  Weights are stored as ``weight/<param>``, masks as
``mask/<param>`` (uint8 in {0, 1}) and score vectors as ``score/<method>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import ArchitectureSpec, MaskedModel, Param
from .pruning import ScoreVector
from .tensor import Tensor

MAGIC = b"PRUE"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: MaskedModel
    scores: dict[str, ScoreVector] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _le(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))


def save_checkpoint(path, model: MaskedModel, scores: dict[str, ScoreVector] | None = None, meta: dict | None = None) -> None:
    tensors: dict[str, np.ndarray] = {}
    for p in model.params:
        tensors[f"weight/{p.name}"] = p.weight.data
        if p.mask is not None:
            tensors[f"mask/{p.name}"] = p.mask.data.astype(np.uint8)
    for method, sv in (scores or {}).items():
        tensors[f"score/{method}"] = sv.values.astype(np.float64)

    manifest, chunks, offset = {}, [], 0
    for name, arr in tensors.items():
        buf = _le(arr).tobytes()
        manifest[name] = {"shape": list(arr.shape), "dtype": arr.dtype.str.lstrip("<>|="), "offset": offset, "nbytes": len(buf)}
        chunks.append(buf)
        offset += len(buf)
    header = {
        "architecture": model.spec.to_dict(),
        "dtype": str(model.dtype),
        "params": [p.name for p in model.params],
        "score_meta": {m: {"method": sv.method, **sv.meta} for m, sv in (scores or {}).items()},
        "meta": meta or {},
        "manifest": manifest,
    }
    raw_header = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC + bytes([VERSION]) + struct.pack("<I", len(raw_header)) + raw_header)
        for buf in chunks:
            f.write(buf)


def read_header(raw: bytes, path="checkpoint") -> tuple[dict, int]:
    if len(raw) < 9:
        raise CheckpointError(f"{path}: truncated; expected at least 9 bytes, got {len(raw)}")
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if raw[4] != VERSION:
        raise CheckpointError(f"{path}: format version {raw[4]} not supported (expected {VERSION})")
    (hlen,) = struct.unpack("<I", raw[5:9])
    start = 9 + hlen
    if len(raw) < start:
        raise CheckpointError(f"{path}: truncated header; expected {start} bytes, got {len(raw)}")
    try:
        header = json.loads(raw[9:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from None
    return header, start


def load_checkpoint(path, architecture: str | None = None) -> Checkpoint:
    """Load a checkpoint; ``architecture`` (if given) must match the stored name."""
    raw = Path(path).read_bytes()
    header, start = read_header(raw, path)
    manifest = header["manifest"]
    expected = start + sum(e["nbytes"] for e in manifest.values())
    if len(raw) != expected:
        raise CheckpointError(f"{path}: manifest expects {expected} bytes, file has {len(raw)}")
    spec = ArchitectureSpec.from_dict(header["architecture"])
    if architecture is not None and architecture != spec.name:
        raise CheckpointError(f"{path}: stored architecture {spec.name!r} != requested {architecture!r}")
    shapes = spec.validate()  # noqa: F841 - raises on an inconsistent stored spec

    def get(name: str) -> np.ndarray:
        e = manifest[name]
        dt = np.dtype("<" + e["dtype"]) if e["dtype"][0] in "fiu" and e["dtype"] not in ("u1", "i1") else np.dtype(e["dtype"])
        buf = raw[start + e["offset"]: start + e["offset"] + e["nbytes"]]
        arr = np.frombuffer(buf, dtype=dt).reshape(e["shape"])
        if int(np.prod(e["shape"])) * dt.itemsize != e["nbytes"]:
            raise CheckpointError(f"{path}: tensor {name} has {e['nbytes']} bytes for shape {e['shape']}")
        return arr.astype(dt.newbyteorder("="))

    params = []
    for name in header["params"]:
        w = get(f"weight/{name}")
        mask = None
        if f"mask/{name}" in manifest:
            m = get(f"mask/{name}")
            if m.shape != w.shape or not np.isin(m, (0, 1)).all():
                raise CheckpointError(f"{path}: mask for {name} is malformed")
            mask = Tensor(m.astype(w.dtype))
        params.append(Param(name, Tensor(w, requires_grad=True), mask))
    model = MaskedModel(spec, params)
    scores = {}
    for key in manifest:
        if key.startswith("score/"):
            method = key.split("/", 1)[1]
            meta = dict(header.get("score_meta", {}).get(method, {}))
            scores[method] = ScoreVector(get(key), meta.pop("method", method), meta)
    return Checkpoint(model, scores, header.get("meta", {}))

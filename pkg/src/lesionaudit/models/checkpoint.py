"""Checkpoint files: JSON manifest followed by little-endian float32 payloads.

Layout::

    b"LACKPT\\r\\n"            8-byte magic
    uint32 LE                  manifest length in bytes
    manifest                   UTF-8 JSON: format_version, spec, tensors[]
    payload                    concatenated <f4 arrays in manifest order
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from ..engine import Tensor
from .layers import ArchitectureSpec, SpecError
from .zoo import ModelParams

MAGIC = b"LACKPT\r\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: ModelParams, spec: ArchitectureSpec, path) -> Path:
    path = Path(path)
    entries = []
    offset = 0
    for name, t in params.tensors.items():
        entries.append({"name": name, "shape": list(t.shape), "trainable": bool(params.trainable[name]),
                        "offset": offset, "count": t.size})
        offset += t.size
    manifest = json.dumps({"format_version": FORMAT_VERSION, "spec": spec.to_dict(), "tensors": entries},
                          sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for t in params.tensors.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return path


def load_checkpoint(path) -> tuple[ModelParams, ArchitectureSpec]:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError("corrupt manifest: bad magic bytes")
    head = len(MAGIC) + 4
    if len(raw) < head:
        raise CheckpointError("corrupt manifest: file too short")
    (mlen,) = struct.unpack("<I", raw[len(MAGIC):head])
    try:
        manifest = json.loads(raw[head:head + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from None
    if not isinstance(manifest, dict) or "format_version" not in manifest:
        raise CheckpointError("corrupt manifest: missing format_version")
    if manifest["format_version"] != FORMAT_VERSION:
        raise CheckpointError(f"unknown checkpoint version {manifest['format_version']!r}")
    try:
        spec = ArchitectureSpec.from_dict(manifest["spec"])
        entries = manifest["tensors"]
    except (KeyError, SpecError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from None

    payload = np.frombuffer(raw, dtype="<f4", offset=head + mlen) if (len(raw) - head - mlen) % 4 == 0 else None
    expected = sum(e["count"] for e in entries)
    if payload is None or payload.size != expected:
        got = (len(raw) - head - mlen) / 4
        raise CheckpointError(f"payload length mismatch: expected {expected} floats, found {got}")

    params = ModelParams()
    for e in entries:
        shape = tuple(e["shape"])
        if math.prod(shape) != e["count"]:
            raise CheckpointError(f"shape/payload length mismatch for {e['name']}")
        data = payload[e["offset"]:e["offset"] + e["count"]].astype(np.float32).reshape(shape)
        params.tensors[e["name"]] = Tensor(data)
        params.trainable[e["name"]] = bool(e["trainable"])

    implied = {f"{info.name}/{p}": (s, tr) for info in spec.summary() for p, (s, tr) in info.params.items()}
    if set(implied) != set(params.tensors):
        raise CheckpointError("tensor names do not match the architecture")
    for name, (shape, trainable) in implied.items():
        if params.tensors[name].shape != tuple(shape):
            raise CheckpointError(f"shape mismatch for {name}")
    return params, spec

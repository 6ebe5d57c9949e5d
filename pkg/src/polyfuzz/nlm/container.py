"""The PFNN model container.

Binary layout (little-endian): magic ``PFNN``, uint16 format version, uint16
length + ASCII cell kind, uint32 dim count + uint32 dims, then every tensor as
row-major float32 in sidecar order. The sidecar ``<path>.json`` lists tensor
names and shapes plus free-form metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PFNN"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_model(path, tensors: dict, cell_kind: str, dims, meta: dict | None = None) -> None:
    path = Path(path)
    kind = cell_kind.encode("ascii")
    dims = [int(x) for x in dims]
    names = sorted(tensors)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HH", FORMAT_VERSION, len(kind)))
        fh.write(kind)
        fh.write(struct.pack(f"<I{len(dims)}I", len(dims), *dims))
        for name in names:
            fh.write(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())
    side = {"format_version": FORMAT_VERSION, "cell_kind": cell_kind, "dims": dims,
            "tensors": [{"name": n, "shape": list(np.shape(tensors[n]))} for n in names],
            "meta": meta or {}}
    sidecar_path(path).write_text(json.dumps(side, indent=1, sort_keys=True), encoding="utf-8")


def load_model(path, dtype=np.float32):
    """Returns (tensors, cell_kind, dims, meta)."""
    path = Path(path)
    try:
        side = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise ContainerError(f"missing model file: {exc.filename}") from None
    if raw[:4] != MAGIC:
        raise ContainerError(f"{path}: not a PFNN file")
    version, klen = struct.unpack_from("<HH", raw, 4)
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported format version {version}")
    off = 8
    kind = raw[off:off + klen].decode("ascii")
    off += klen
    (ndims,) = struct.unpack_from("<I", raw, off)
    dims = list(struct.unpack_from(f"<{ndims}I", raw, off + 4))
    off += 4 + 4 * ndims
    if kind != side["cell_kind"] or dims != side["dims"]:
        raise ContainerError(f"{path}: header and sidecar disagree")
    tensors = {}
    for entry in side["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = off + 4 * count
        if end > len(raw):
            raise ContainerError(f"{path}: truncated at tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=count,
                                               offset=off).reshape(shape).astype(dtype)
        off = end
    if off != len(raw):
        raise ContainerError(f"{path}: {len(raw) - off} trailing bytes")
    return tensors, kind, dims, side.get("meta", {})

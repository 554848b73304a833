"""Tensor blob format: one JSON manifest line, then little-endian float64 data."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT = "prerank.tensors"
VERSION = 1


def dumps_tensors(arrays: Mapping[str, np.ndarray]) -> bytes:
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.size
    header = {"format": FORMAT, "version": VERSION, "dtype": "float64",
              "byteorder": "little", "tensors": entries}
    return json.dumps(header, sort_keys=True).encode() + b"\n" + b"".join(blobs)


def loads_tensors(raw: bytes) -> dict[str, np.ndarray]:
    head, _, body = raw.partition(b"\n")
    header = json.loads(head)
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise ValueError(f"unsupported tensor blob: {header.get('format')} v{header.get('version')}")
    data = np.frombuffer(body, dtype="<f8")
    out = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        out[e["name"]] = data[e["offset"]:e["offset"] + n].reshape(tuple(e["shape"])).astype(np.float64)
    return out


def save_tensors(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps_tensors(arrays))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    return loads_tensors(Path(path).read_bytes())

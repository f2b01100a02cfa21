"""Versioned binary container for named tensors plus a JSON header.

Layout (all integers little-endian)::

    magic   8 bytes  b"CHEMGCK\\0"
    version uint32
    hlen    uint64   length of the UTF-8 JSON header
    header  hlen bytes
    payload concatenated tensor bytes, offsets relative to payload start
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from .errors import CheckpointError

MAGIC = b"CHEMGCK\x00"
FORMAT_VERSION = 1
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def write_container(path: Union[str, Path], header: dict, tensors: Dict[str, np.ndarray],
                    dtype: str = "<f4") -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = dtype if arr.dtype.kind == "f" else "<i8"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[dt]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dt,
                        "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    full = dict(header, tensors=entries)
    blob = json.dumps(full, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)


def read_container(path: Union[str, Path]) -> Tuple[dict, Dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a chatemg container")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    base = 20 + hlen
    tensors = {}
    for e in header.pop("tensors"):
        if e["dtype"] not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype {e['dtype']}")
        start = base + e["offset"]
        buf = raw[start:start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        tensors[e["name"]] = np.frombuffer(buf, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"]).copy()
    return header, tensors

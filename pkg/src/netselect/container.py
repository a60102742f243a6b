"""Versioned binary container: JSON header followed by little-endian array payloads.

Layout::

    b"NSEL"  uint32 version  uint64 header_len  header(utf-8 JSON)  payload

The header's ``arrays`` entry lists ``name``, ``dtype``, ``shape`` and
``offset`` (bytes into the payload) for each stored array.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import IoFailure

MAGIC = b"NSEL"
VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8"}


def write_container(path: str | os.PathLike, header: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        kind = "i8" if np.issubdtype(arr.dtype, np.integer) else "f8"
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[kind]).tobytes()
        entries.append({"name": name, "dtype": kind, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    full = dict(header)
    full["arrays"] = entries
    blob = json.dumps(full, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", VERSION, len(blob)))
            fh.write(blob)
            for raw in chunks:
                fh.write(raw)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_container(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if data[:4] != MAGIC:
        raise IoFailure(f"{path}: not a container file")
    version, hlen = struct.unpack("<IQ", data[4:16])
    if version != VERSION:
        raise IoFailure(f"{path}: unsupported container version {version}")
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    payload = memoryview(data)[16 + hlen :]
    arrays = {}
    for e in header.pop("arrays"):
        dt = np.dtype(_DTYPES[e["dtype"]])
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=e["offset"])
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(dt.newbyteorder("="))
    return header, arrays

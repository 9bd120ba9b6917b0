"""Self-describing binary container for model parameters.

Layout (all integers little-endian)::

    magic        4 bytes   b"PVSC"
    version      uint16    currently 1
    header_len   uint32
    header       header_len bytes of UTF-8 JSON (sorted keys); holds
                 "kind", "config" and, for classifiers, "class_names"
    n_tensors    uint32
    n_tensors x:
        name_len uint16, name (UTF-8)
        dtype    uint8     0 = float32, 1 = float64, 2 = int32
        ndim     uint8, then ndim x uint32 dims
        data     row-major values of the given dtype

The file is a pure function of its inputs, so identical models produce
identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ModelFormatError

MAGIC = b"PVSC"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i4")}
_CODES = {v: k for k, v in _DTYPES.items()}


def write_container(path, kind: str, header: dict, tensors: dict) -> None:
    head = dict(header, kind=kind)
    blob = json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        if dtype not in _CODES:
            raise ValueError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", _CODES[dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"{self.path}: truncated model file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(path, kind: str | None = None):
    """Return ``(header, tensors)``; checks ``kind`` when given."""
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise ModelFormatError(f"{path}: not a pvscreen model file")
    version, header_len = r.unpack("<HI")
    if version != VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(r.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt header: {exc}") from exc
    if kind is not None and header.get("kind") != kind:
        raise ModelFormatError(f"{path}: expected a {kind!r} model, found {header.get('kind')!r}")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise ModelFormatError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        dtype = _DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(n * dtype.itemsize), dtype=dtype).reshape(shape).copy()
    if r.pos != len(data):
        raise ModelFormatError(f"{path}: trailing bytes after last tensor")
    return header, tensors

"""Versioned binary model container.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"RSSILSTM"
    8       2     format version (uint16), currently 1
    10      4     tau, time steps per input (uint32)
    14      4     N, hidden units per layer (uint32)
    18      4     L, layer count (uint32)
    22      4     K, classes (uint32)
    26      4     tensor count (uint32)
    30      ...   tensors, each:
                    uint16 name length, UTF-8 name,
                    uint8 ndim, uint32 per dimension,
                    float64 little-endian values in row-major order
    -32     32    SHA-256 digest of every preceding byte

Model tensors are named ``layer{l}.W``, ``layer{l}.b``, ``out.W``, ``out.b``.
Other names (e.g. ``scaler.means``) are carried as extras.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from rssi_gestures.lstm.model import LstmModel

MAGIC = b"RSSILSTM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHIIIII")
_DIGEST = 32


class ModelFormatError(ValueError):
    pass


def dumps(model: LstmModel, extras: dict[str, np.ndarray] | None = None) -> bytes:
    tensors = dict(model.params)
    for name, value in (extras or {}).items():
        if name in tensors:
            raise ValueError(f"extra tensor {name!r} clashes with a model parameter")
        tensors[name] = np.asarray(value, dtype=float)
    out = [_HEADER.pack(MAGIC, FORMAT_VERSION, model.tau, model.hidden, model.n_layers,
                        model.classes, len(tensors))]
    for name, arr in tensors.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        out.append(struct.pack("<H", len(encoded)) + encoded)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes(order="C"))
    body = b"".join(out)
    return body + hashlib.sha256(body).digest()


def loads(data: bytes) -> tuple[LstmModel, dict[str, np.ndarray]]:
    if len(data) < _HEADER.size + _DIGEST:
        raise ModelFormatError("model file is truncated")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    magic, version, tau, hidden, layers, classes, count = _HEADER.unpack_from(body)
    if magic != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}, expected {FORMAT_VERSION}")
    if hashlib.sha256(body).digest() != digest:
        raise ModelFormatError("checksum mismatch: model file is corrupted or truncated")
    pos = _HEADER.size
    tensors = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 8
            if pos + size > len(body):
                raise ModelFormatError(f"tensor {name!r} runs past the end of the file")
            tensors[name] = np.frombuffer(body, dtype="<f8", count=size // 8, offset=pos).astype(float).reshape(shape)
            pos += size
    except struct.error as e:
        raise ModelFormatError(f"malformed tensor table: {e}") from None
    if pos != len(body):
        raise ModelFormatError("trailing bytes after tensor table")
    names = [f"layer{l}.{p}" for l in range(layers) for p in ("W", "b")] + ["out.W", "out.b"]
    missing = [n for n in names if n not in tensors]
    if missing:
        raise ModelFormatError(f"model file lacks tensors {missing}")
    params = {n: tensors.pop(n) for n in names}
    try:
        model = LstmModel(tau, hidden, layers, params, classes)
    except ValueError as e:
        raise ModelFormatError(str(e)) from None
    return model, tensors


def save_model(path, model: LstmModel, extras: dict[str, np.ndarray] | None = None) -> None:
    Path(path).write_bytes(dumps(model, extras))


def load_model(path) -> tuple[LstmModel, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())

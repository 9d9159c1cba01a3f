"""Named-tensor binary container used for checkpoints, UBM/TV models and features.

Layout (little-endian)::

    b"SPRC"  u16 version  u32 meta_len  meta (UTF-8 JSON, sorted keys)
    u32 n_tensors
    n_tensors x { u16 name_len  name  u8 ndim  u32 dims[ndim]  f32 payload }
"""
from __future__ import annotations

import io
import json
import struct
from collections import OrderedDict

import numpy as np

from .audio import atomic_write_bytes
from .errors import FormatError

MAGIC = b"SPRC"
VERSION = 1


def dumps(tensors, meta=None):
    buf = io.BytesIO()
    meta_bytes = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(payload):
    """Parse a container; any truncation or corruption raises FormatError."""
    try:
        return _parse(memoryview(payload))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt tensor container: {exc}") from exc


def _parse(view):
    if bytes(view[:4]) != MAGIC:
        raise FormatError("not a tensor container (bad magic)")
    version, meta_len = struct.unpack_from("<HI", view, 4)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    pos = 10
    meta = json.loads(bytes(view[pos:pos + meta_len]).decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    tensors = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos:pos + name_len]).decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", view, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", view, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        if pos + 4 * size > len(view):
            raise FormatError(f"tensor {name!r} truncated")
        data = np.frombuffer(view, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * size
        tensors[name] = data
    if pos != len(view):
        raise FormatError("trailing bytes after last tensor")
    return tensors, meta


def save(path, tensors, meta=None):
    atomic_write_bytes(path, dumps(tensors, meta))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())

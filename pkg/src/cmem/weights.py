"""CMEM tensor container.

Layout (all integers little-endian)::

    b"CMEM"  u16 version  u32 count
    repeated count times:
        u32 name_len  name (UTF-8)  u8 rank  u32 dims[rank]  u8 dtype_tag  raw values

Raw values are little-endian, row-major.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CMEM"
VERSION = 1

DTYPE_TAGS = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i4"),
    3: np.dtype("<i8"),
    4: np.dtype("u1"),
    5: np.dtype("i1"),
}


class FormatError(ValueError):
    pass


def _tag_for(arr):
    if arr.dtype == np.bool_:
        return 4
    key = (arr.dtype.kind, arr.dtype.itemsize)
    for tag, ref in DTYPE_TAGS.items():
        if (ref.kind, ref.itemsize) == key:
            return tag
    raise FormatError(f"unsupported dtype {arr.dtype}")


def _chunks(tensors):
    """Yield the serialized file piece by piece; array payloads are zero-copy views."""
    yield MAGIC + struct.pack("<HI", VERSION, len(tensors))
    for name, value in tensors.items():
        arr = np.asarray(value)
        tag = _tag_for(arr)
        raw = name.encode("utf-8")
        yield (struct.pack("<I", len(raw)) + raw + struct.pack("<B", arr.ndim)
               + struct.pack(f"<{arr.ndim}I", *arr.shape) + struct.pack("<B", tag))
        yield memoryview(np.ascontiguousarray(arr, dtype=DTYPE_TAGS[tag])).cast("B")


def dumps(tensors):
    """Serialize an ordered mapping name -> array."""
    return b"".join(bytes(c) for c in _chunks(tensors))


def loads(buf):
    view = memoryview(buf)
    if bytes(view[:4]) != MAGIC:
        raise FormatError("not a CMEM file (bad magic)")
    if len(view) < 10:
        raise FormatError("truncated CMEM header")
    version, count = struct.unpack_from("<HI", view, 4)
    if version != VERSION:
        raise FormatError(f"unsupported CMEM version {version} (reader knows {VERSION})")
    pos = 10
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", view, pos)
            pos += 4
            name = bytes(view[pos:pos + nlen]).decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", view, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", view, pos)
            pos += 4 * rank
            (tag,) = struct.unpack_from("<B", view, pos)
            pos += 1
            if tag not in DTYPE_TAGS:
                raise FormatError(f"unknown dtype tag {tag} for tensor {name!r}")
            dt = DTYPE_TAGS[tag]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(view):
                raise FormatError(f"truncated data for tensor {name!r}")
            arr = np.frombuffer(view[pos:pos + nbytes], dtype=dt).reshape(dims)
            out[name] = arr.astype(dt.newbyteorder("="), copy=True)
            pos += nbytes
    except struct.error as exc:
        raise FormatError(f"truncated CMEM file: {exc}") from None
    return out


def save_tensors(path, tensors):
    with open(path, "wb") as fh:
        for chunk in _chunks(tensors):
            fh.write(chunk)


def load_tensors(path):
    return loads(Path(path).read_bytes())

"""Named-tensor container shared by checkpoints and pyramid sidecars.

Layout::

    b"LAUD" | version: u32 LE | header_len: u64 LE | header: UTF-8 JSON | payload

The header maps each tensor name to ``{"shape", "dtype": "f32", "byte_offset"}``
with offsets relative to the start of the payload. Free-form metadata lives
under the reserved ``"__metadata__"`` key. Payloads are little-endian float32,
stored in the order the header lists them.
"""

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"LAUD"
VERSION = 1
METADATA_KEY = "__metadata__"
_PREFIX = struct.Struct("<4sIQ")


def write_container(tensors, metadata=None):
    names = sorted(tensors)
    header = {}
    if metadata is not None:
        header[METADATA_KEY] = metadata
    chunks = []
    offset = 0
    for name in names:
        if name == METADATA_KEY:
            raise FormatError(f"tensor name {METADATA_KEY!r} is reserved")
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        header[name] = {"shape": list(arr.shape), "dtype": "f32", "byte_offset": offset}
        raw = arr.tobytes()
        chunks.append(raw)
        offset += len(raw)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)


def read_container(buf):
    """Parse a container. Returns ``(tensors, metadata)``; raises FormatError on any defect."""
    buf = bytes(buf)
    if len(buf) < _PREFIX.size:
        raise FormatError("truncated container: missing prefix")
    magic, version, hlen = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}, expected {VERSION}")
    start = _PREFIX.size
    if len(buf) < start + hlen:
        raise FormatError("truncated container: header cut short")
    try:
        header = json.loads(buf[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from None
    if not isinstance(header, dict):
        raise FormatError("corrupt header: not a JSON object")
    payload = memoryview(buf)[start + hlen :]
    metadata = header.pop(METADATA_KEY, None)
    tensors = {}
    expected = 0
    for name, info in header.items():
        try:
            shape = tuple(int(d) for d in info["shape"])
            dtype = info["dtype"]
            off = int(info["byte_offset"])
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"corrupt header entry for {name!r}") from None
        if dtype != "f32":
            raise FormatError(f"tensor {name!r} has unsupported dtype {dtype!r}")
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if off != expected:
            raise FormatError(f"tensor {name!r} offset {off} breaks header order (expected {expected})")
        if off + nbytes > len(payload):
            raise FormatError(f"truncated payload for tensor {name!r}")
        tensors[name] = np.frombuffer(payload[off : off + nbytes], dtype="<f4").reshape(shape).astype(np.float32)
        expected = off + nbytes
    if expected != len(payload):
        raise FormatError(f"{len(payload) - expected} trailing bytes after last tensor")
    return tensors, metadata

"""Independent EKC1 container reader/writer.

The container is the interchange contract with the analysis toolkit, so
this implementation is deliberately self-contained: magic ``EKC1``, a
little-endian u32 header length, a canonical-JSON header (sorted keys,
compact separators, space-padded so the payload starts 8-byte aligned)
listing ``{name, dtype, shape, byte_offset}``, then raw little-endian
row-major payloads at offsets that are multiples of 8 relative to the
payload start.  Metadata rides in a u8 tensor named ``meta`` holding
canonical JSON.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"EKC1"
_DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i64": np.dtype("<i8"),
    "u8": np.dtype("|u1"),
}
_TAGS = {v: k for k, v in _DTYPES.items()}


class EkcError(Exception):
    pass


def _align8(n: int) -> int:
    return (n + 7) & ~7


def write(tensors: dict[str, np.ndarray], path) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise EkcError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        offset = _align8(offset)
        entries.append({"name": name, "dtype": _TAGS[arr.dtype],
                        "shape": [int(s) for s in arr.shape], "byte_offset": offset})
        blobs.append((offset, arr.tobytes()))
        offset += arr.nbytes
    header = json.dumps(entries, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header += b" " * (_align8(8 + len(header)) - 8 - len(header))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        pos = 0
        for off, blob in blobs:
            fh.write(b"\x00" * (off - pos))
            fh.write(blob)
            pos = off + len(blob)


def read(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise EkcError(f"{path}: bad magic {raw[:4]!r}")
    (header_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + header_len:
        raise EkcError(f"{path}: truncated header")
    try:
        entries = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise EkcError(f"{path}: header is not valid JSON: {exc}") from exc
    payload = raw[8 + header_len:]
    out = {}
    for e in entries:
        dt = _DTYPES.get(e["dtype"])
        if dt is None:
            raise EkcError(f"{path}: unknown dtype {e['dtype']!r}")
        shape = tuple(int(s) for s in e["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        off = int(e["byte_offset"])
        if off + count * dt.itemsize > len(payload):
            raise EkcError(f"{path}: truncated payload for {e['name']!r}")
        out[e["name"]] = np.frombuffer(payload, dtype=dt, count=count,
                                       offset=off).reshape(shape).copy()
    return out


def pack_meta(meta: dict) -> np.ndarray:
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return np.frombuffer(blob.encode("utf-8"), dtype=np.uint8).copy()


def unpack_meta(arr: np.ndarray) -> dict:
    return json.loads(arr.tobytes().decode("utf-8"))

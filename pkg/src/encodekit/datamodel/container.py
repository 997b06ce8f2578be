"""Binary tensor container ("EKC1").

Every artifact the pipeline persists (designs, models, reports, tracks,
BOLD runs) is a single container file.  The layout is fixed so that files
are bit-exact and can be produced or consumed by independent
implementations:

    bytes 0..3    magic ``b"EKC1"``
    bytes 4..7    little-endian u32: header length H in bytes
    bytes 8..8+H  UTF-8 JSON array of entries
                  ``{"name": str, "dtype": str, "shape": [int], "byte_offset": int}``
                  serialized compactly with sorted keys and padded with
                  trailing spaces so that 8 + H is a multiple of 8
    payload       raw row-major little-endian tensor bytes

``byte_offset`` is relative to the start of the payload section (byte
8 + H of the file).  Offsets are assigned in entry order, each rounded up
to a multiple of 8; gaps are zero-filled.  Supported dtypes are ``f32``,
``f64``, ``i64`` and ``u8``.

Non-tensor metadata is stored, by convention, as a ``u8`` tensor named
``"meta"`` holding canonical UTF-8 JSON (sorted keys, no whitespace).
"""

from __future__ import annotations

import json
import struct
from typing import Iterable, Mapping

import numpy as np

MAGIC = b"EKC1"
META_TENSOR = "meta"

_DTYPE_TO_NUMPY = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i64": np.dtype("<i8"),
    "u8": np.dtype("|u1"),
}
_NUMPY_TO_DTYPE = {v: k for k, v in _DTYPE_TO_NUMPY.items()}


class ContainerError(Exception):
    """Base error for malformed or unwritable container files."""


class BadMagicError(ContainerError):
    """File does not begin with the EKC1 magic bytes."""


class TruncatedError(ContainerError):
    """File is shorter than its header declares."""


class UnknownDtypeError(ContainerError):
    """Header declares a dtype outside f32/f64/i64/u8."""


class HeaderError(ContainerError):
    """Header is not valid JSON or violates the entry schema."""


class DuplicateNameError(ContainerError):
    """Two tensors share a name."""


def _align8(n: int) -> int:
    return (n + 7) & ~7


def _as_items(tensors) -> list[tuple[str, np.ndarray]]:
    if isinstance(tensors, Mapping):
        items = list(tensors.items())
    else:
        items = list(tensors)
    seen = set()
    for name, _ in items:
        if not isinstance(name, str) or not name:
            raise ContainerError(f"tensor name must be a non-empty string, got {name!r}")
        if name in seen:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        seen.add(name)
    return items


def write_container(tensors: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]],
                    path) -> None:
    """Write named tensors to `path` in the EKC1 layout described above.

    Tensor order in the file follows the iteration order of `tensors`.
    Arrays must already have a supported dtype; bools and other widths are
    rejected rather than silently converted.
    """
    items = _as_items(tensors)
    entries = []
    payloads = []
    offset = 0
    for name, arr in items:
        arr = np.asarray(arr)
        key = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if key not in _NUMPY_TO_DTYPE:
            raise UnknownDtypeError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        arr = arr.astype(_DTYPE_TO_NUMPY[_NUMPY_TO_DTYPE[key]], copy=False)
        offset = _align8(offset)
        entries.append({
            "name": name,
            "dtype": _NUMPY_TO_DTYPE[key],
            "shape": [int(s) for s in arr.shape],
            "byte_offset": offset,
        })
        payloads.append((offset, arr.tobytes()))
        offset += arr.nbytes

    header = json.dumps(entries, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header += b" " * (_align8(8 + len(header)) - 8 - len(header))

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        pos = 0
        for off, blob in payloads:
            fh.write(b"\x00" * (off - pos))
            fh.write(blob)
            pos = off + len(blob)


def read_container(path) -> dict[str, np.ndarray]:
    """Read an EKC1 file back into a dict of writable native arrays.

    Exact inverse of :func:`write_container` for valid files; malformed
    files raise a specific :class:`ContainerError` subclass.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise TruncatedError(f"{path}: file too short for header length field")
    (header_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + header_len:
        raise TruncatedError(f"{path}: header declares {header_len} bytes, file has fewer")
    try:
        entries = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"{path}: header is not valid JSON: {exc}") from exc
    if not isinstance(entries, list):
        raise HeaderError(f"{path}: header must be a JSON array")

    payload = raw[8 + header_len:]
    out: dict[str, np.ndarray] = {}
    for entry in entries:
        try:
            name = entry["name"]
            dtype_tag = entry["dtype"]
            shape = tuple(int(s) for s in entry["shape"])
            byte_offset = int(entry["byte_offset"])
        except (TypeError, KeyError, ValueError) as exc:
            raise HeaderError(f"{path}: malformed header entry {entry!r}") from exc
        if dtype_tag not in _DTYPE_TO_NUMPY:
            raise UnknownDtypeError(f"{path}: tensor {name!r} has unknown dtype {dtype_tag!r}")
        if name in out:
            raise DuplicateNameError(f"{path}: duplicate tensor name {name!r}")
        if any(s < 0 for s in shape) or byte_offset < 0:
            raise HeaderError(f"{path}: negative shape or offset in entry {name!r}")
        dt = _DTYPE_TO_NUMPY[dtype_tag]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * dt.itemsize
        if byte_offset + nbytes > len(payload):
            raise TruncatedError(
                f"{path}: tensor {name!r} needs bytes up to {byte_offset + nbytes}, "
                f"payload has {len(payload)}")
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=byte_offset)
        out[name] = arr.reshape(shape).copy()
    return out


def pack_meta(meta: dict) -> np.ndarray:
    """Encode a metadata dict as the canonical-JSON u8 tensor."""
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return np.frombuffer(blob.encode("utf-8"), dtype=np.uint8).copy()


def unpack_meta(arr: np.ndarray) -> dict:
    if arr.dtype != np.uint8 or arr.ndim != 1:
        raise HeaderError("meta tensor must be a 1-D u8 array")
    try:
        return json.loads(arr.tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"meta tensor is not valid JSON: {exc}") from exc

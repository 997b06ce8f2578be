import json
import struct

import numpy as np
import pytest

from encodekit.datamodel import (BadMagicError, DuplicateNameError, HeaderError,
                                 TruncatedError, UnknownDtypeError, pack_meta,
                                 read_container, unpack_meta, write_container)


def test_zero_tensor_payload_is_exactly_24_zero_bytes(tmp_path):
    path = tmp_path / "z.ekc"
    write_container({"z": np.zeros((2, 3), dtype=np.float32)}, path)
    raw = path.read_bytes()
    assert raw[:4] == b"EKC1"
    (header_len,) = struct.unpack("<I", raw[4:8])
    payload = raw[8 + header_len:]
    assert payload == b"\x00" * 24


def test_round_trip_identity(tmp_path):
    tensors = {
        "a": np.arange(12, dtype=np.float32).reshape(3, 4),
        "b": np.array([-1.5, 2.25], dtype=np.float64),
        "c": np.array([[1, -2], [3, 4]], dtype=np.int64),
        "d": np.array([0, 255, 7], dtype=np.uint8),
    }
    path = tmp_path / "rt.ekc"
    write_container(tensors, path)
    back = read_container(path)
    assert list(back) == list(tensors)
    for name in tensors:
        assert back[name].dtype == tensors[name].dtype
        assert np.array_equal(back[name], tensors[name])


def test_header_offsets_aligned_to_8(tmp_path):
    # an odd-sized u8 tensor in front forces padding before the next offset
    path = tmp_path / "emb.ekc"
    write_container({
        "odd": np.array([1, 2, 3], dtype=np.uint8),
        "emb": np.zeros((5174, 768), dtype=np.float32),
    }, path)
    raw = path.read_bytes()
    (header_len,) = struct.unpack("<I", raw[4:8])
    assert (8 + header_len) % 8 == 0
    entries = {e["name"]: e for e in json.loads(raw[8:8 + header_len])}
    assert entries["odd"]["byte_offset"] == 0
    assert entries["emb"]["byte_offset"] == 8
    assert entries["emb"]["shape"] == [5174, 768]
    # gap between the 3 u8 bytes and the aligned payload is zero-filled
    payload = raw[8 + header_len:]
    assert payload[3:8] == b"\x00" * 5


def test_golden_bytes_are_reproducible(tmp_path):
    # the format promises bit-exact files: same tensors -> same bytes
    tensors = {"x": np.array([1.0, 2.0], dtype=np.float64),
               "y": np.array([3], dtype=np.int64)}
    p1, p2 = tmp_path / "a.ekc", tmp_path / "b.ekc"
    write_container(tensors, p1)
    write_container(tensors, p2)
    golden = (b"EKC1" + struct.pack("<I", 112)
              + b'[{"byte_offset":0,"dtype":"f64","name":"x","shape":[2]},'
                b'{"byte_offset":16,"dtype":"i64","name":"y","shape":[1]}]'
              + np.array([1.0, 2.0]).tobytes() + np.array([3], dtype="<i8").tobytes())
    assert p1.read_bytes() == p2.read_bytes() == golden


def test_bad_magic_is_a_distinct_error(tmp_path):
    path = tmp_path / "bad.ekc"
    write_container({"x": np.zeros(2, dtype=np.float32)}, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXC1"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        read_container(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "trunc.ekc"
    write_container({"x": np.arange(100, dtype=np.float64)}, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(TruncatedError):
        read_container(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "trunc2.ekc"
    write_container({"x": np.arange(4, dtype=np.float32)}, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:10])
    with pytest.raises(TruncatedError):
        read_container(path)


def test_unknown_dtype_in_header(tmp_path):
    path = tmp_path / "u.ekc"
    header = json.dumps([{"name": "x", "dtype": "f16", "shape": [2], "byte_offset": 0}])
    header += " " * ((8 - (8 + len(header)) % 8) % 8)
    path.write_bytes(b"EKC1" + struct.pack("<I", len(header)) + header.encode() + b"\x00" * 4)
    with pytest.raises(UnknownDtypeError):
        read_container(path)


def test_header_not_json(tmp_path):
    path = tmp_path / "j.ekc"
    path.write_bytes(b"EKC1" + struct.pack("<I", 8) + b"not json")
    with pytest.raises(HeaderError):
        read_container(path)


def test_unsupported_write_dtype(tmp_path):
    with pytest.raises(UnknownDtypeError):
        write_container({"x": np.zeros(2, dtype=np.float16)}, tmp_path / "x.ekc")


def test_duplicate_names_rejected(tmp_path):
    pairs = [("x", np.zeros(1, dtype=np.uint8)), ("x", np.ones(1, dtype=np.uint8))]
    with pytest.raises(DuplicateNameError):
        write_container(pairs, tmp_path / "d.ekc")


def test_random_round_trips_bitwise(tmp_path, rng):
    # randomized property: round trip is bitwise lossless for every dtype
    dtypes = [np.float32, np.float64, np.int64, np.uint8]
    for trial in range(50):
        tensors = {}
        for j in range(rng.integers(1, 5)):
            dt = dtypes[rng.integers(0, len(dtypes))]
            ndim = int(rng.integers(0, 4))
            shape = tuple(int(s) for s in rng.integers(0, 6, size=ndim))
            if np.issubdtype(dt, np.floating):
                arr = (rng.standard_normal(shape) * 10.0 ** float(rng.integers(-3, 4))).astype(dt)
            else:
                arr = rng.integers(0, 200, size=shape).astype(dt)
            tensors[f"t{j}"] = arr
        path = tmp_path / f"r{trial}.ekc"
        write_container(tensors, path)
        back = read_container(path)
        assert list(back) == list(tensors)
        for name, arr in tensors.items():
            assert back[name].dtype == arr.dtype
            assert back[name].shape == arr.shape
            assert back[name].tobytes() == arr.tobytes()


def test_meta_pack_round_trip():
    meta = {"kind": "track", "tags": ["a", "b"], "layer": 7, "x": None}
    assert unpack_meta(pack_meta(meta)) == meta

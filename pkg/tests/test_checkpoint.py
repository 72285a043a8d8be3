import struct

import numpy as np
import pytest

from icereg.checkpoint import FORMAT_VERSION, MAGIC, read_tensors, write_tensors
from icereg.errors import ContractError


def sample_tensors():
    return {
        "stem.w": np.arange(2 * 1 * 3 * 3, dtype=np.float32).reshape(2, 1, 3, 3),
        "head.b": np.array([0.1, -0.5, 3.0], dtype=np.float32),
        "scalar": np.array(7.0, dtype=np.float32),
    }


def test_roundtrip_values_shapes_order(tmp_path):
    path = tmp_path / "t.ictk"
    tensors = sample_tensors()
    write_tensors(path, tensors)
    back = read_tensors(path)
    assert list(back.keys()) == list(tensors.keys())
    for name, arr in tensors.items():
        assert back[name].dtype == np.float32
        assert back[name].shape == arr.shape
        assert np.array_equal(back[name], arr)


def test_byte_identical_rewrites(tmp_path):
    a, b = tmp_path / "a.ictk", tmp_path / "b.ictk"
    write_tensors(a, sample_tensors())
    write_tensors(b, sample_tensors())
    assert a.read_bytes() == b.read_bytes()


def test_header_layout(tmp_path):
    path = tmp_path / "h.ictk"
    write_tensors(path, {"x": np.zeros((2, 3), dtype=np.float32)})
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    version, count = struct.unpack_from("<II", raw, 4)
    assert version == FORMAT_VERSION
    assert count == 1
    name_len, = struct.unpack_from("<I", raw, 12)
    assert raw[16:16 + name_len] == b"x"
    rank, = struct.unpack_from("<I", raw, 16 + name_len)
    assert rank == 2
    dims = struct.unpack_from("<QQ", raw, 20 + name_len)
    assert dims == (2, 3)
    # payload: 6 float32 values, little-endian
    assert len(raw) == 20 + name_len + 16 + 6 * 4


def test_float64_input_downcast(tmp_path):
    path = tmp_path / "d.ictk"
    write_tensors(path, {"w": np.array([1.5, 2.5], dtype=np.float64)})
    back = read_tensors(path)
    assert back["w"].dtype == np.float32
    assert np.array_equal(back["w"], np.array([1.5, 2.5], dtype=np.float32))


def test_row_major_layout(tmp_path):
    path = tmp_path / "f.ictk"
    arr = np.asfortranarray(np.arange(6, dtype=np.float32).reshape(2, 3))
    write_tensors(path, {"w": arr})
    back = read_tensors(path)
    assert np.array_equal(back["w"], arr)


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ictk"
    path.write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(ContractError):
        read_tensors(path)


def test_rejects_truncated_payload(tmp_path):
    path = tmp_path / "trunc.ictk"
    write_tensors(path, {"w": np.zeros(10, dtype=np.float32)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ContractError):
        read_tensors(path)


def test_rejects_unknown_version(tmp_path):
    path = tmp_path / "ver.ictk"
    write_tensors(path, {"w": np.zeros(1, dtype=np.float32)})
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 4, FORMAT_VERSION + 1)
    path.write_bytes(bytes(raw))
    with pytest.raises(ContractError):
        read_tensors(path)


def test_empty_mapping_roundtrip(tmp_path):
    path = tmp_path / "empty.ictk"
    write_tensors(path, {})
    assert read_tensors(path) == {}


def test_unicode_names(tmp_path):
    path = tmp_path / "u.ictk"
    write_tensors(path, {"weights/层": np.ones(2, dtype=np.float32)})
    assert "weights/层" in read_tensors(path)

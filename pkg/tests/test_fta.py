"""Tensor archive format tests."""
import struct

import numpy as np
import pytest

from poselatent.errors import ArchiveError
from poselatent.fta import MAGIC, load_fta, save_fta


def test_roundtrip_preserves_values_and_order(tmp_path):
    tensors = {
        "weights/conv1": np.arange(24, dtype=np.float32).reshape(2, 3, 4),
        "bias": np.array([1.5, -2.5], dtype=np.float32),
        "scalarish": np.array([7.0], dtype=np.float32),
    }
    p = tmp_path / "a.fta"
    save_fta(p, tensors)
    back = load_fta(p)
    assert list(back) == list(tensors)
    for name in tensors:
        np.testing.assert_array_equal(back[name], tensors[name])
        assert back[name].dtype == np.float32


def test_write_is_deterministic(tmp_path):
    tensors = {"a": np.ones((3, 3), dtype=np.float32), "b": np.zeros(5, dtype=np.float32)}
    p1, p2 = tmp_path / "x1.fta", tmp_path / "x2.fta"
    save_fta(p1, tensors)
    save_fta(p2, tensors)
    assert p1.read_bytes() == p2.read_bytes()


def test_header_layout(tmp_path):
    p = tmp_path / "h.fta"
    save_fta(p, {"ab": np.zeros((2, 2), dtype=np.float32)})
    blob = p.read_bytes()
    assert blob[:4] == MAGIC
    assert struct.unpack_from("<I", blob, 4)[0] == 1
    assert struct.unpack_from("<I", blob, 8)[0] == 2      # name length
    assert blob[12:14] == b"ab"
    assert blob[14] == 0 and blob[15] == 2                 # dtype f32, rank 2
    assert struct.unpack_from("<II", blob, 16) == (2, 2)
    assert len(blob) == 24 + 16


def test_float64_input_is_stored_as_f32(tmp_path):
    p = tmp_path / "c.fta"
    save_fta(p, {"x": np.array([1.0, 2.0])})
    assert load_fta(p)["x"].dtype == np.float32


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.fta"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ArchiveError) as ei:
        load_fta(p)
    assert "magic" in str(ei.value)


def test_truncated_payload(tmp_path):
    p = tmp_path / "t.fta"
    save_fta(p, {"x": np.ones(10, dtype=np.float32)})
    blob = p.read_bytes()
    p.write_bytes(blob[:-8])
    with pytest.raises(ArchiveError) as ei:
        load_fta(p)
    assert "truncated" in str(ei.value)


def test_trailing_garbage(tmp_path):
    p = tmp_path / "g.fta"
    save_fta(p, {"x": np.ones(2, dtype=np.float32)})
    p.write_bytes(p.read_bytes() + b"xx")
    with pytest.raises(ArchiveError):
        load_fta(p)


def test_missing_file():
    with pytest.raises(ArchiveError):
        load_fta("/nonexistent/definitely/not/here.fta")


def test_empty_archive(tmp_path):
    p = tmp_path / "e.fta"
    save_fta(p, {})
    assert load_fta(p) == {}


def test_unicode_names(tmp_path):
    p = tmp_path / "u.fta"
    save_fta(p, {"блок/σ": np.zeros(1, dtype=np.float32)})
    assert "блок/σ" in load_fta(p)

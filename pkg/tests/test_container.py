import numpy as np
import pytest

from grnea.container import CheckpointError, read_container, write_container


def _arrays():
    return {"w": np.arange(6, dtype=np.float32).reshape(2, 3), "ids": np.array([3, -1], dtype=np.int64),
            "x": np.linspace(0, 1, 5)}


def test_round_trip(tmp_path):
    p = tmp_path / "m.ckpt"
    write_container(p, "thing", {"a": 1}, _arrays(), meta={"note": "hi"})
    header, arrays = read_container(p, "thing")
    assert header["config"] == {"a": 1} and header["meta"] == {"note": "hi"}
    for k, v in _arrays().items():
        np.testing.assert_array_equal(arrays[k], v)
        assert arrays[k].dtype == v.dtype


def test_bytes_deterministic(tmp_path):
    write_container(tmp_path / "a", "k", {"b": 2, "a": 1}, _arrays())
    write_container(tmp_path / "b", "k", {"a": 1, "b": 2}, _arrays())
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_truncation_detected(tmp_path):
    p = tmp_path / "m.ckpt"
    write_container(p, "k", {}, _arrays())
    blob = p.read_bytes()
    for cut in (5, len(blob) // 2, len(blob) - 1):
        p.write_bytes(blob[:cut])
        with pytest.raises(CheckpointError):
            read_container(p)


def test_bit_flip_detected(tmp_path):
    p = tmp_path / "m.ckpt"
    write_container(p, "k", {}, _arrays())
    blob = bytearray(p.read_bytes())
    blob[len(blob) // 2] ^= 0x10
    p.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        read_container(p)


def test_wrong_kind_and_missing(tmp_path):
    p = tmp_path / "m.ckpt"
    write_container(p, "lssvr", {}, {})
    with pytest.raises(CheckpointError, match="expected 'resvae'"):
        read_container(p, "resvae")
    with pytest.raises(CheckpointError, match="cannot read"):
        read_container(tmp_path / "absent")
    (tmp_path / "junk").write_bytes(b"hello world, not a checkpoint")
    with pytest.raises(CheckpointError, match="magic"):
        read_container(tmp_path / "junk")


def test_unsupported_dtype(tmp_path):
    with pytest.raises(CheckpointError, match="dtype"):
        write_container(tmp_path / "m", "k", {}, {"c": np.zeros(2, dtype=np.complex64)})

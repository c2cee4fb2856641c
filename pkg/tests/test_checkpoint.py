import numpy as np
import pytest

from msfsnet.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from msfsnet.errors import FormatError


@pytest.fixture
def ckpt(rng):
    return Checkpoint(
        {"param/a": rng.standard_normal((3, 4)).astype(np.float32),
         "param/b": rng.standard_normal(5),
         "param/scalar": np.array(2.5, np.float32),
         "adam_m/a": np.zeros((3, 4), np.float32)},
        {"step": 7, "note": "x", "rng": {"state": [1, 2]}},
    )


def test_roundtrip_bit_identical(tmp_path, ckpt):
    path = save_checkpoint(tmp_path / "c.msfs", ckpt)
    back = load_checkpoint(path)
    assert back.meta == ckpt.meta
    assert back.entries.keys() == ckpt.entries.keys()
    for k, v in ckpt.entries.items():
        assert back.entries[k].dtype == v.dtype and back.entries[k].shape == v.shape
        assert back.entries[k].tobytes() == v.tobytes()
    assert not (tmp_path / "c.msfs.tmp").exists()


def test_bad_magic(tmp_path, ckpt):
    path = save_checkpoint(tmp_path / "c.msfs", ckpt)
    data = bytearray(path.read_bytes())
    data[:4] = b"NOPE"
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_version_mismatch(tmp_path, ckpt):
    path = save_checkpoint(tmp_path / "c.msfs", ckpt)
    data = bytearray(path.read_bytes())
    data[4] = 99
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(path)


@pytest.mark.parametrize("cut", [3, 10, 40, -1])
def test_truncated(tmp_path, ckpt, cut):
    path = save_checkpoint(tmp_path / "c.msfs", ckpt)
    data = path.read_bytes()
    path.write_bytes(data[:cut])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_trailing_bytes(tmp_path, ckpt):
    path = save_checkpoint(tmp_path / "c.msfs", ckpt)
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_unsupported_dtype(tmp_path):
    with pytest.raises(FormatError):
        save_checkpoint(tmp_path / "c.msfs", Checkpoint({"x": np.zeros(2, np.int32)}))

import numpy as np
import pytest

from softswarm.diffcore import CheckpointError, load_checkpoint, save_checkpoint


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "g0/enc/w": rng.normal(size=(7, 3)),
        "g0/enc/b": rng.normal(size=3),
        "g1/head/w": rng.normal(size=(3, 5)) * 1e-17,
        "scalar": np.array(np.pi),
    }
    path = tmp_path / "params.ssw"
    save_checkpoint(path, tensors, group_count=2, meta={"alpha": 0.25})
    loaded, header = load_checkpoint(path)
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert loaded[name].tobytes() == np.asarray(tensors[name], dtype=np.float64).tobytes()
        assert loaded[name].shape == np.asarray(tensors[name]).shape
    assert header["group_count"] == 2
    assert header["meta"]["alpha"] == 0.25


def test_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_write_is_deterministic(tmp_path):
    tensors = {"b": np.arange(4.0), "a": np.ones((2, 2))}
    p1, p2 = tmp_path / "one", tmp_path / "two"
    save_checkpoint(p1, tensors, group_count=1)
    save_checkpoint(p2, dict(reversed(list(tensors.items()))), group_count=1)
    assert p1.read_bytes() == p2.read_bytes()

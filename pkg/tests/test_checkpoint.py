import numpy as np
import pytest

from acd.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def test_round_trip_is_bit_exact(tmp_path, rng):
    arrays = {
        "layer.weight": rng.standard_normal((7, 3)),
        "layer.bias": rng.standard_normal(3),
        "scalar": np.asarray(np.pi),
        "odd.values": np.array([1e-300, -0.0, np.nextafter(1.0, 2.0)]),
    }
    meta = {"config": {"model": "ccp", "hidden_dim": 64}, "iteration": 42}
    path = tmp_path / "model.acdt"
    save_checkpoint(path, arrays.items(), meta)
    loaded, loaded_meta = load_checkpoint(path)
    assert loaded_meta == meta
    assert list(loaded) == list(arrays)
    for name, arr in arrays.items():
        assert loaded[name].shape == arr.shape
        assert np.array_equal(
            loaded[name].view(np.uint64), np.asarray(arr).view(np.uint64)
        ), f"{name} not bit-exact"


def test_magic_bytes(tmp_path):
    path = tmp_path / "x.acdt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_version_check(tmp_path):
    path = tmp_path / "x.acdt"
    save_checkpoint(path, [("a", np.zeros(2))], {})
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_file_starts_with_magic_and_version(tmp_path):
    path = tmp_path / "x.acdt"
    save_checkpoint(path, [("a", np.arange(3.0))], {"k": 1})
    raw = path.read_bytes()
    assert raw[:4] == b"ACDT"
    assert int.from_bytes(raw[4:8], "little") == 1

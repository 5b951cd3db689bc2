from __future__ import annotations

import struct
import zlib

import numpy as np
import pytest

from mfnet.checkpoint import (FORMAT_VERSION, MAGIC, Checkpoint, decode, encode, load_checkpoint,
                              save_checkpoint)
from mfnet.errors import CheckpointError, CheckpointVersionError, StructuralError
from mfnet.graph import GraphBuilder, init_params


def random_graph(rng):
    C = int(rng.integers(1, 5)) * 2
    b = GraphBuilder((C, 5, 5), name=f"g{int(rng.integers(1000))}")
    h = b.input_name
    for i in range(int(rng.integers(1, 4))):
        kind = rng.choice(["conv", "bn", "relu"])
        if kind == "conv":
            h = b.conv(f"c{i}", h, C, (3, 3), 1, 1, groups=int(rng.choice([1, 2])),
                       bias=bool(rng.integers(2)))
        elif kind == "bn":
            h = b.bn(f"bn{i}", h)
        else:
            h = b.relu(f"r{i}", h)
    h = b.global_avg_pool("gap", h)
    h = b.flatten("flat", h)
    return b.build(b.linear("fc", h, int(rng.integers(1, 6))))


def random_store(rng):
    g = random_graph(rng)
    dtype = np.float32 if rng.integers(2) else np.float64
    store = init_params(g, int(rng.integers(1 << 30)), dtype)
    for t in store.tensors().values():
        t[...] = rng.standard_normal(t.shape) * 10.0 ** rng.integers(-30, 30)
        flat = t.reshape(-1)
        flat[0] = rng.choice([0.0, -0.0, np.finfo(dtype).tiny / 4, np.finfo(dtype).max])
    return g, store


def test_round_trip_50_random_stores(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(50):
        g, store = random_store(rng)
        path = tmp_path / f"s{i}.ckpt"
        save_checkpoint(store, g, path, {"note": f"run {i}", "ünïcode": "✓"})
        back = load_checkpoint(path, g)
        for k, v in store.tensors().items():
            w = back.tensors()[k]
            assert w.dtype == v.dtype and w.shape == v.shape and w.tobytes() == v.tobytes()


def test_file_layout(tmp_path):
    g, store = random_store(np.random.default_rng(1))
    save_checkpoint(store, g, tmp_path / "a.ckpt")
    data = (tmp_path / "a.ckpt").read_bytes()
    assert data[:4] == MAGIC
    assert struct.unpack("<I", data[4:8])[0] == FORMAT_VERSION
    assert struct.unpack("<I", data[8:12])[0] == 32
    assert data[12:44] == g.fingerprint()
    assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])


def test_empty_metadata():
    ckpt = Checkpoint(b"\x01" * 32, {"w": np.arange(3.0)}, {})
    back = decode(encode(ckpt))
    assert back.metadata == {} and back.tensors["w"].tobytes() == np.arange(3.0).tobytes()


def test_truncation_fuzz():
    g, store = random_store(np.random.default_rng(2))
    from mfnet.checkpoint import checkpoint_from_store

    data = encode(checkpoint_from_store(store, g, {"k": "v"}))
    for n in range(len(data)):
        with pytest.raises(CheckpointError):
            decode(data[:n])


def test_corruption_fuzz():
    g, store = random_store(np.random.default_rng(3))
    from mfnet.checkpoint import checkpoint_from_store

    data = encode(checkpoint_from_store(store, g))
    rng = np.random.default_rng(4)
    for _ in range(300):
        buf = bytearray(data)
        pos = int(rng.integers(len(buf)))
        buf[pos] ^= 1 << int(rng.integers(8))
        with pytest.raises(CheckpointError):
            decode(bytes(buf))
    with pytest.raises(CheckpointError):
        decode(data + b"\x00")


def test_version_too_new():
    ckpt = Checkpoint(b"\x00" * 32, {}, {}, version=FORMAT_VERSION + 1)
    with pytest.raises(CheckpointVersionError, match="version"):
        decode(encode(ckpt))


def test_bad_magic():
    data = encode(Checkpoint(b"\x00" * 32))
    with pytest.raises(CheckpointError, match="magic"):
        decode(b"XXXX" + data[4:])


def test_graph_with_extra_layer(tmp_path):
    b = GraphBuilder((3,), name="small")
    g = b.build(b.linear("fc", b.input_name, 2))
    save_checkpoint(init_params(g, 0), g, tmp_path / "a.ckpt")
    b = GraphBuilder((3,), name="small")
    h = b.linear("fc", b.input_name, 2)
    g2 = b.build(b.linear("fc2", h, 2))
    with pytest.raises(StructuralError, match="small.*fc2"):
        load_checkpoint(tmp_path / "a.ckpt", g2)
    with pytest.raises(StructuralError, match="fc2"):
        load_checkpoint(tmp_path / "a.ckpt", g2, force=True)


def test_force_loads_under_renamed_graph(tmp_path):
    b = GraphBuilder((3,), name="one")
    g = b.build(b.linear("fc", b.input_name, 2))
    store = init_params(g, 0)
    save_checkpoint(store, g, tmp_path / "a.ckpt")
    b = GraphBuilder((3,), name="two")
    g2 = b.build(b.linear("fc", b.input_name, 2))
    with pytest.raises(StructuralError, match="two"):
        load_checkpoint(tmp_path / "a.ckpt", g2)
    back = load_checkpoint(tmp_path / "a.ckpt", g2, force=True)
    assert np.array_equal(back.params["fc.weight"], store.params["fc.weight"])


def test_unsupported_precision():
    with pytest.raises(CheckpointError):
        encode(Checkpoint(b"", {"w": np.arange(3)}))

from __future__ import annotations

import numpy as np
import pytest

from mfnet.arch import NetConfig, build_mfnet, toy_config
from mfnet.checkpoint import checkpoint_from_store, encode
from mfnet.errors import StructuralError
from mfnet.graph import forward, init_params
from mfnet.inflation import inflate_checkpoint, inflate_kernel, inflate_params, temporal_slice_sum


def test_unit_kernel_thirds():
    k = inflate_kernel(np.ones((1, 1, 1, 1)), 3)
    assert k.shape == (1, 1, 3, 1, 1)
    assert np.allclose(k.ravel(), 1 / 3, rtol=0, atol=1e-16)


def test_kt_one_copies():
    k2 = np.random.default_rng(0).standard_normal((4, 2, 3, 3))
    k3 = inflate_kernel(k2, 1)
    assert k3.shape == (4, 2, 1, 3, 3) and np.array_equal(k3[:, :, 0], k2)


@pytest.mark.parametrize("kt", [2, 3, 5, 7])
def test_slice_sum_bitwise(kt):
    k2 = np.random.default_rng(kt).standard_normal((8, 4, 3, 3))
    k3 = inflate_kernel(k2, kt)
    assert temporal_slice_sum(k3).tobytes() == k2.tobytes()
    # sub-kernels agree up to rounding of the residual slice
    assert np.max(np.abs(k3 - k3[:, :, :1])) <= 1e-14


def _pair(**changes):
    cfg = toy_config(temporal_test_mode=True, **changes)
    return build_mfnet(cfg.with_dims(2)), build_mfnet(cfg.with_dims(3))


def _perturbed_store(graph, seed):
    store = init_params(graph, seed)
    rng = np.random.default_rng(seed + 1)
    for name, p in store.params.items():
        if not name.endswith(".weight"):
            p += 0.2 * rng.standard_normal(p.shape)
    for name, v in store.buffers.items():
        v += 0.1 * np.abs(rng.standard_normal(v.shape))
    return store


def test_inflated_store_matches_3d_shape_table():
    cfg = NetConfig(dims=2)
    g2, g3 = build_mfnet(cfg), build_mfnet(cfg.with_dims(3, num_classes=1000))
    s3 = inflate_params(init_params(g2, 0, np.float32), g2, g3)
    assert {k: v.shape for k, v in s3.params.items()} == g3.param_shapes
    for layer in g3.layers:
        if layer.kind == "conv3d":
            w2 = init_params(g2, 0, np.float32).params[f"{layer.name}.weight"]
            assert temporal_slice_sum(s3.params[f"{layer.name}.weight"]).tobytes() == w2.tobytes()


def test_constant_clip_equivalence_per_layer():
    g2, g3 = _pair()
    s2 = _perturbed_store(g2, 0)
    s3 = inflate_params(s2, g2, g3)
    frame = np.random.default_rng(5).standard_normal((2, 3, 32, 32))
    clip = np.repeat(frame[:, :, None], 8, axis=2)
    _, r2 = forward(g2, s2, frame, keep=True)
    _, r3 = forward(g3, s3, clip, keep=True)
    worst = 0.0
    for layer in g3.layers:
        a2, a3 = r2.values[layer.name], r3.values[layer.name]
        if a3.ndim == 5:
            # every temporal slice (one after global pooling) against the 2D map
            assert a3.shape[2] == (1 if layer.name == "head.pool" else 8)
            a2 = a2[:, :, None]
        worst = max(worst, float(np.max(np.abs(a3 - a2))))
    assert worst <= 1e-6


def test_production_graph_is_not_equivalent_at_boundaries():
    # zero temporal padding breaks equivalence at clip ends; the test mode is required
    cfg = toy_config()
    g2, g3 = build_mfnet(cfg.with_dims(2)), build_mfnet(cfg)
    s2 = _perturbed_store(g2, 0)
    s3 = inflate_params(s2, g2, g3)
    frame = np.random.default_rng(5).standard_normal((1, 3, 32, 32))
    y2 = forward(g2, s2, frame)[0]
    y3 = forward(g3, s3, np.repeat(frame[:, :, None], 8, axis=2))[0]
    assert np.max(np.abs(y2 - y3)) > 1e-6


def test_idempotent():
    g2, g3 = _pair()
    c2 = checkpoint_from_store(_perturbed_store(g2, 1), g2)
    assert encode(inflate_checkpoint(c2, g2, g3)) == encode(inflate_checkpoint(c2, g2, g3))


def test_copies_non_conv_tensors_verbatim():
    g2, g3 = _pair()
    s2 = _perturbed_store(g2, 2)
    s3 = inflate_params(s2, g2, g3)
    for name in ("fc.weight", "fc.bias", "conv1.bn.gamma", "conv2.u1.bn1.beta"):
        assert np.array_equal(s3.params[name], s2.params[name])
    for name, v in s2.buffers.items():
        assert np.array_equal(s3.buffers[name], v)


def test_structural_errors_name_layer():
    g2, _ = _pair()
    s2 = init_params(g2, 0)
    with pytest.raises(StructuralError, match="conv1"):
        inflate_params(s2, g2, build_mfnet(toy_config(stem_kernel=3)))
    deeper = build_mfnet(toy_config(stage_repeats=(2, 1, 1, 1)))
    with pytest.raises(StructuralError, match="conv2.u2"):
        inflate_params(s2, g2, deeper)
    wider = build_mfnet(toy_config(width_scale=0.25))
    with pytest.raises(StructuralError, match="conv"):
        inflate_params(s2, g2, wider)


def test_fingerprint_mismatch_rejected():
    g2, g3 = _pair()
    other = build_mfnet(toy_config(dims=2, multiplexer=False))
    ckpt = checkpoint_from_store(init_params(other, 0), other)
    with pytest.raises(StructuralError):
        inflate_checkpoint(ckpt, g2, g3)

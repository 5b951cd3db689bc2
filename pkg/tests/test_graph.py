from __future__ import annotations

import numpy as np
import pytest

from mfnet import tensor_core as tc
from mfnet.arch import NetConfig, build_mfnet_2d
from mfnet.errors import ContractError, DimensionError, StructuralError
from mfnet.graph import GraphBuilder, ParamStore, backward, forward, init_params


def test_single_relu():
    b = GraphBuilder((2,))
    g = b.build(b.relu("r", b.input_name))
    y, _ = forward(g, init_params(g, 0), np.array([[-1.0, 2.0]]))
    assert y.tolist() == [[0.0, 2.0]]


def test_residual_add_of_zero_branch():
    b = GraphBuilder((4, 5, 5))
    h = b.conv("c", b.input_name, 4, (3, 3), 1, 1)
    g = b.build(b.add("add", b.input_name, h))
    store = init_params(g, 0)
    store.params["c.weight"][:] = 0
    x = np.random.default_rng(0).standard_normal((2, 4, 5, 5))
    assert np.array_equal(forward(g, store, x)[0], x)


def test_full_2d_mfnet_output_shape():
    g = build_mfnet_2d(NetConfig(dims=2))
    assert g.output_shape == (1000,)
    y, _ = forward(g, init_params(g, 0, np.float32), np.zeros((1, 3, 224, 224), np.float32))
    assert y.shape == (1, 1000)


def test_shape_signature_and_unknown_parameter():
    b = GraphBuilder((3,))
    g = b.build(b.linear("fc", b.input_name, 2))
    store = init_params(g, 0)
    with pytest.raises(DimensionError):
        forward(g, store, np.zeros((1, 4)))
    del store.params["fc.bias"]
    with pytest.raises(StructuralError):
        forward(g, store, np.zeros((1, 3)))


def test_linear_squared_error_gradient():
    b = GraphBuilder((3,))
    g = b.build(b.linear("fc", b.input_name, 1, bias=False))
    store = init_params(g, 1)
    x, target = np.array([[0.5, -1.0, 2.0]]), 0.7
    pred, ret = forward(g, store, x, "train")
    backward(g, store, ret, 2 * (pred - target))
    expected = 2 * (pred[0, 0] - target) * x[0]
    assert np.allclose(store.grads["fc.weight"][0], expected, rtol=0, atol=1e-15)


def test_residual_gradient_two_layer_toy():
    # y = x + W2 relu(W1 x); dL/dx = g + W1^T (relu'(W1 x) * W2^T g)
    b = GraphBuilder((4,))
    h = b.linear("l1", b.input_name, 5, bias=False)
    h = b.relu("r", h)
    h = b.linear("l2", h, 4, bias=False)
    g = b.build(b.add("add", b.input_name, h))
    store = init_params(g, 2)
    rng = np.random.default_rng(3)
    x, lg = rng.standard_normal((1, 4)), rng.standard_normal((1, 4))
    _, ret = forward(g, store, x, "train")
    dx = backward(g, store, ret, lg)
    W1, W2 = store.params["l1.weight"], store.params["l2.weight"]
    z = x @ W1.T
    hand = lg + ((lg @ W2) * (z > 0)) @ W1
    assert np.max(np.abs(dx - hand)) <= 1e-10


def test_small_graph_fd():
    from mfnet.gradcheck import check_graph

    b = GraphBuilder((4, 6, 6), name="small")
    h = b.bn("bn", b.input_name)
    h = b.relu("r", h)
    h = b.conv("c", h, 4, (3, 3), 1, 1, groups=2)
    h = b.add("add", b.input_name, h)
    h = b.global_avg_pool("gap", h)
    h = b.flatten("flat", h)
    g = b.build(b.linear("fc", h, 3))
    assert max(r.error for r in check_graph(g, 0, classify=True)) <= 1e-5


def test_backward_without_retained_state():
    b = GraphBuilder((3,))
    g = b.build(b.relu("r", b.input_name))
    store = init_params(g, 0)
    with pytest.raises(ContractError):
        backward(g, store, None, np.ones((1, 3)))
    _, ret = forward(g, store, np.ones((1, 3)), "infer")
    with pytest.raises(ContractError):
        backward(g, store, ret, np.ones((1, 3)))


def _conv_bn_graph():
    b = GraphBuilder((4, 6, 6))
    h = b.conv("c", b.input_name, 8, (3, 3), 1, 1)
    return b.build(b.bn("bn", h))


def test_init_determinism_and_values():
    g = _conv_bn_graph()
    a, c = init_params(g, 5), init_params(g, 5)
    for k in a.tensors():
        assert a.tensors()[k].tobytes() == c.tensors()[k].tobytes()
    assert np.all(a.params["bn.gamma"] == 1.0) and np.all(a.params["bn.beta"] == 0.0)
    assert not np.array_equal(init_params(g, 6).params["c.weight"], a.params["c.weight"])


def test_init_variance():
    b = GraphBuilder((64, 4, 4))
    g = b.build(b.conv("c", b.input_name, 16, (3, 3), 1, 1))
    w = init_params(g, 0).params["c.weight"]
    assert w.size >= 9000
    target = 2.0 / (64 * 9)
    assert abs(w.var() - target) <= 0.1 * target


def test_infer_purity():
    g = _conv_bn_graph()
    store = init_params(g, 0)
    store.buffers["bn.running_mean"][:] = 0.3
    before = store.copy()
    x = np.random.default_rng(1).standard_normal((3, 4, 6, 6))
    y1, _ = forward(g, store, x, "infer")
    y2, _ = forward(g, store, x, "infer")
    assert y1.tobytes() == y2.tobytes()
    for k, v in before.tensors().items():
        assert np.array_equal(v, store.tensors()[k])
    forward(g, store, x, "train")
    assert not np.array_equal(before.buffers["bn.running_mean"], store.buffers["bn.running_mean"])


def test_shape_soundness_any_batch():
    g = _conv_bn_graph()
    store = init_params(g, 0)
    for B in (1, 2, 5):
        assert forward(g, store, np.zeros((B, 4, 6, 6)))[0].shape == (B, 8, 6, 6)


def test_param_store_validate_names_missing():
    g = _conv_bn_graph()
    store = init_params(g, 0)
    del store.params["bn.gamma"]
    with pytest.raises(StructuralError, match="bn.gamma"):
        store.validate(g)


def test_graph_build_rejects_bad_shapes():
    b = GraphBuilder((4, 6, 6))
    h = b.conv("c", b.input_name, 8, (3, 3))
    with pytest.raises((DimensionError, StructuralError)):
        b.build(b.add("add", b.input_name, h))


def test_fingerprint_stable_and_sensitive():
    assert _conv_bn_graph().fingerprint() == _conv_bn_graph().fingerprint()
    b = GraphBuilder((4, 6, 6))
    h = b.conv("c", b.input_name, 8, (3, 3), 1, 0)
    assert b.build(b.bn("bn", h)).fingerprint() != _conv_bn_graph().fingerprint()


def test_store_copy_is_independent():
    store = init_params(_conv_bn_graph(), 0)
    c = store.copy()
    c.params["c.weight"] += 1
    assert not np.array_equal(c.params["c.weight"], store.params["c.weight"])
    assert isinstance(c, ParamStore)


def test_cross_entropy_gradient_through_graph():
    b = GraphBuilder((5,))
    g = b.build(b.linear("fc", b.input_name, 3))
    store = init_params(g, 0)
    x = np.random.default_rng(0).standard_normal((4, 5))
    labels = np.array([0, 2, 1, 1])

    def f(w):
        s = store.copy()
        s.params["fc.weight"] = w
        out, ret = forward(g, s, x, "train")
        loss, d = tc.softmax_cross_entropy(out, labels)
        backward(g, s, ret, d)
        return loss, s.grads["fc.weight"]

    assert tc.finite_difference_check(f, store.params["fc.weight"]) <= 1e-7

from __future__ import annotations

import numpy as np
import pytest

from mfnet.blocks import (FiberUnitConfig, MultiplexerConfig, build_mf_unit, build_multiplexer,
                          connections_dense, connections_sliced)
from mfnet.cost import count_flops, count_params
from mfnet.errors import ConfigurationError
from mfnet.graph import forward, init_params


def test_connection_examples():
    assert connections_dense(64, 64, 64) == 8192
    assert connections_dense(96, 192, 96) == 36864
    for c in (1, 7, 100):
        assert connections_dense(c, c, c) == 2 * c * c
    assert connections_sliced(64, 64, 64, 16) == 512
    assert connections_sliced(96, 192, 96, 1) == connections_dense(96, 192, 96)
    with pytest.raises(ConfigurationError):
        connections_sliced(96, 100, 96, 16)


def test_eq2_factor_sweep():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 33))
        m = [n * int(rng.integers(1, 50)) for _ in range(3)]
        assert connections_dense(*m) == n * connections_sliced(*m, n)


def _conv_macs(graph):
    rep = count_flops(graph)
    return sum(r.macs for r in rep.rows if r.kind in ("conv2d", "conv3d"))


@pytest.mark.parametrize("ndim", [2, 3])
def test_multiplexer_overhead_two_over_k(ndim):
    from mfnet.graph import GraphBuilder

    for C in (96, 192, 384, 768):
        for k in (2, 4, 8):
            mux = build_multiplexer(MultiplexerConfig(C, k, ndim), (2,) * ndim)
            b = GraphBuilder((C,) + (2,) * ndim)
            single = b.build(b.conv("c", b.input_name, C, (1,) * ndim))
            assert k * _conv_macs(mux) == 2 * _conv_macs(single)


def test_multiplexer_zero_branch_passthrough():
    g = build_multiplexer(MultiplexerConfig(32, 4))
    store = init_params(g, 0)
    store.params["mux.conv2.weight"][:] = 0
    x = np.random.default_rng(1).standard_normal((2, 32, 8, 8))
    assert np.array_equal(forward(g, store, x)[0], x)


@pytest.mark.parametrize("C", [32, 64, 96])
@pytest.mark.parametrize("k", [2, 4])
def test_multiplexer_shape(C, k):
    g = build_multiplexer(MultiplexerConfig(C, k, 3), (2, 5, 5))
    assert g.output_shape == (C, 2, 5, 5)


def test_multiplexer_config_errors():
    with pytest.raises(ConfigurationError):
        MultiplexerConfig(16, 1)


def test_unit_zero_weights_identity():
    cfg = FiberUnitConfig(fibers=4, in_channels=16, mid_channels=16, out_channels=16, ndim=3)
    g = build_mf_unit(cfg, (4, 6, 6))
    store = init_params(g, 0)
    for name in store.params:
        if name.endswith(".weight"):
            store.params[name][:] = 0
    x = np.random.default_rng(2).standard_normal((1, 16, 4, 6, 6))
    assert np.array_equal(forward(g, store, x)[0], x)


def test_unit_shapes_and_shortcut_choice():
    cfg = FiberUnitConfig(4, 16, 32, 32, stride=(2, 2, 2), ndim=3)
    assert cfg.shortcut == "projection"
    g = build_mf_unit(cfg, (4, 8, 8))
    assert g.output_shape == (32, 2, 4, 4)
    assert g.layer("unit.conv1").spec.kernel == (3, 3, 3)
    assert g.layer("unit.conv2").spec.kernel == (1, 3, 3)
    assert g.layer("unit.conv1").spec.groups == 4
    with pytest.raises(ConfigurationError):
        FiberUnitConfig(4, 16, 16, 32, shortcut="identity")
    with pytest.raises(ConfigurationError):
        FiberUnitConfig(4, 18, 16, 16)


def _fiber_response(multiplexer: bool, ndim: int) -> tuple[float, float]:
    """Max change of other fibers' body output, and of the perturbed fiber's own."""
    N, C = 4, 16
    cfg = FiberUnitConfig(N, C, C, C, ndim=ndim, multiplexer=multiplexer, reduction=2)
    spatial = (3, 5, 5) if ndim == 3 else (5, 5)
    g = build_mf_unit(cfg, spatial)
    store = init_params(g, 3)
    rng = np.random.default_rng(4)
    for name, p in store.params.items():
        if not name.endswith(".weight"):
            p += 0.1 * rng.standard_normal(p.shape)
    x = rng.standard_normal((2, C) + spatial)
    out = forward(g, store, x, keep=True)[1].values["unit.conv2"]
    x2 = x.copy()
    g_fiber = 1
    sl = slice(g_fiber * C // N, (g_fiber + 1) * C // N)
    x2[:, sl] = 0.0
    out2 = forward(g, store, x2, keep=True)[1].values["unit.conv2"]
    diff = np.abs(out2 - out)
    own = diff[:, sl].max()
    others = np.delete(diff, np.arange(C)[sl], axis=1).max()
    return float(others), float(own)


@pytest.mark.parametrize("ndim", [2, 3])
def test_fiber_isolation_and_routing(ndim):
    others, own = _fiber_response(False, ndim)
    assert others <= 1e-14 and own > 1e-6
    others, _ = _fiber_response(True, ndim)
    assert others > 1e-6


@pytest.mark.parametrize("ndim", [2, 3])
def test_grouped_param_count_matches_eq2(ndim):
    N, m_in, m_mid, m_out = 4, 16, 24, 32
    cfg = FiberUnitConfig(N, m_in, m_mid, m_out, ndim=ndim, multiplexer=False,
                          first_temporal_extent=1)
    g = build_mf_unit(cfg)
    rows = {r.name: r.params for r in count_params(g).rows}
    assert rows["unit.conv1"] + rows["unit.conv2"] == connections_sliced(m_in, m_mid, m_out, N) * 9


def test_fiber_body_flops_divide_by_n():
    def body(n):
        cfg = FiberUnitConfig(n, 32, 32, 32, multiplexer=False)
        rep = count_flops(build_mf_unit(cfg))
        return rep.row("unit.conv1").macs + rep.row("unit.conv2").macs

    assert body(1) == 8 * body(8) == 16 * body(16)

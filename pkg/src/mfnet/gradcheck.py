"""Finite-difference verification of every layer kind and of a small MF-Net."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .arch import NetConfig, build_mfnet
from .graph import GraphBuilder, GraphSpec, ParamStore, backward, forward, init_params


@dataclass
class GradCheckResult:
    name: str
    error: float

    def passed(self, tol: float) -> bool:
        return self.error <= tol


def _projection_loss(graph: GraphSpec, store: ParamStore, x: np.ndarray, proj: np.ndarray,
                     labels: np.ndarray | None):
    out, ret = forward(graph, store, x, "train")
    if labels is not None:
        loss, dout = tc.softmax_cross_entropy(out, labels)
    else:
        loss, dout = float((out * proj).sum()), proj
    dx = backward(graph, store, ret, dout)
    return loss, dx


def check_graph(graph: GraphSpec, seed: int, batch: int = 2, h: float = 1e-4,
                max_coords: int | None = 24, classify: bool = False) -> list[GradCheckResult]:
    """Check d(loss)/d(input) and d(loss)/d(every parameter) of ``graph``.

    The loss is a fixed random projection of the output (or softmax
    cross-entropy with ``classify=True``).  At most ``max_coords`` randomly
    chosen coordinates are probed per tensor.
    """
    rng = np.random.default_rng(seed)
    store = init_params(graph, seed)
    for name, p in store.params.items():
        # move BN affine terms and biases off their trivial init values
        if not name.endswith(".weight"):
            p += 0.1 * rng.standard_normal(p.shape)
    x = rng.standard_normal((batch,) + graph.input_shape)
    out_shape = (batch,) + graph.output_shape
    proj = rng.standard_normal(out_shape)
    labels = rng.integers(0, out_shape[-1], size=batch) if classify else None

    def pick(size):
        if max_coords is None or size <= max_coords:
            return None
        return rng.choice(size, max_coords, replace=False)

    results = []

    def f_input(xv):
        return _projection_loss(graph, store.copy(), xv, proj, labels)

    results.append(GradCheckResult(f"{graph.name}:input",
                                   tc.finite_difference_check(f_input, x, h, pick(x.size))))
    for pname in graph.param_shapes:
        def f_param(pv, pname=pname):
            s = store.copy()
            s.params[pname] = pv
            loss, _ = _projection_loss(graph, s, x, proj, labels)
            return loss, s.grads[pname]

        err = tc.finite_difference_check(f_param, store.params[pname], h,
                                         pick(store.params[pname].size))
        results.append(GradCheckResult(f"{graph.name}:{pname}", err))
    return results


def layer_graphs() -> list[GraphSpec]:
    """One small graph per layer kind."""
    graphs = []
    b = GraphBuilder((4, 7, 7), name="conv2d")
    b.conv("conv", b.input_name, 6, (3, 3), 2, 1, groups=2, bias=True)
    graphs.append(b.build())
    b = GraphBuilder((4, 4, 5, 5), name="conv3d")
    b.conv("conv", b.input_name, 4, (3, 3, 3), (1, 2, 1), 1, groups=2, bias=True,
           padding_mode="replicate")
    graphs.append(b.build())
    b = GraphBuilder((3, 4, 4), name="batch_norm")
    b.bn("bn", b.input_name)
    graphs.append(b.build())
    b = GraphBuilder((3, 5, 5), name="relu")
    b.relu("relu", b.input_name)
    graphs.append(b.build())
    b = GraphBuilder((2, 6, 6), name="max_pool")
    b.pool("pool", b.input_name, "max", (3, 3), 2, 1)
    graphs.append(b.build())
    b = GraphBuilder((2, 3, 6, 6), name="avg_pool")
    b.pool("pool", b.input_name, "avg", (1, 3, 3), (1, 2, 2), (0, 1, 1))
    graphs.append(b.build())
    b = GraphBuilder((5,), name="linear")
    b.linear("fc", b.input_name, 3)
    graphs.append(b.build())
    b = GraphBuilder((2, 4, 4), name="add")
    r = b.relu("relu", b.input_name)
    b.add("add", b.input_name, r)
    graphs.append(b.build())
    b = GraphBuilder((3, 2, 4, 4), name="global_avg_pool")
    b.global_avg_pool("gap", b.input_name)
    graphs.append(b.build())
    b = GraphBuilder((2, 3, 3), name="flatten")
    h = b.flatten("flat", b.input_name)
    b.linear("fc", h, 2)
    graphs.append(b.build())
    return graphs


def toy_mfnet_config() -> NetConfig:
    """Two multi-fiber units (one per stage), 3D, tiny extents."""
    return NetConfig(dims=3, num_classes=3, fibers=2, reduction=2, stage_channels=(4, 8),
                     stage_repeats=(1, 1), stem_channels=4, stem_kernel=3, frames=4, size=8)


def run_suite(seed: int = 0, h: float = 1e-4) -> list[GradCheckResult]:
    results = []
    for g in layer_graphs():
        results.extend(check_graph(g, seed, h=h))
    results.extend(check_graph(build_mfnet(toy_mfnet_config()), seed, h=h, max_coords=8,
                               classify=True))
    return results

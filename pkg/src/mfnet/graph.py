"""Declarative layer graphs with forward evaluation and reverse-mode gradients.

A :class:`GraphSpec` is an ordered, topologically sorted list of
:class:`LayerSpec` records.  It is the single description consumed by the
numeric forward/backward pass, the cost model, inflation and checkpointing.
Shapes are propagated once at build time, so numeric code never has to
discover a shape error.

Shapes recorded in a graph omit the batch axis: ``(C, H, W)`` or
``(C, T, H, W)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import tensor_core as tc
from .errors import ConfigurationError, ContractError, DimensionError, StructuralError

LAYER_KINDS = ("conv2d", "conv3d", "batch_norm", "relu", "pool", "linear", "add",
               "global_avg_pool", "flatten")


@dataclass(frozen=True)
class BatchNormSpec:
    channels: int
    eps: float = 1e-5
    momentum: float = 0.9

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigurationError(f"batch_norm eps must be positive, got {self.eps}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"batch_norm momentum must lie in [0, 1), got {self.momentum}")


@dataclass(frozen=True)
class LinearSpec:
    in_features: int
    out_features: int
    bias: bool = True


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    inputs: tuple[str, ...]
    spec: object = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        object.__setattr__(self, "inputs", tuple(self.inputs))

    @property
    def param_names(self) -> tuple[str, ...]:
        if self.kind in ("conv2d", "conv3d"):
            return (f"{self.name}.weight",) + ((f"{self.name}.bias",) if self.spec.bias else ())
        if self.kind == "batch_norm":
            return (f"{self.name}.gamma", f"{self.name}.beta")
        if self.kind == "linear":
            return (f"{self.name}.weight",) + ((f"{self.name}.bias",) if self.spec.bias else ())
        return ()

    @property
    def buffer_names(self) -> tuple[str, ...]:
        if self.kind == "batch_norm":
            return (f"{self.name}.running_mean", f"{self.name}.running_var")
        return ()

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        s = self.spec
        if self.kind in ("conv2d", "conv3d"):
            shapes = {f"{self.name}.weight": s.weight_shape}
            if s.bias:
                shapes[f"{self.name}.bias"] = (s.out_channels,)
            return shapes
        if self.kind == "batch_norm":
            return {f"{self.name}.gamma": (s.channels,), f"{self.name}.beta": (s.channels,)}
        if self.kind == "linear":
            shapes = {f"{self.name}.weight": (s.out_features, s.in_features)}
            if s.bias:
                shapes[f"{self.name}.bias"] = (s.out_features,)
            return shapes
        return {}

    def canonical(self) -> dict:
        spec = None
        if self.spec is not None:
            spec = {k: list(v) if isinstance(v, tuple) else v
                    for k, v in sorted(vars(self.spec).items())}
        return {"name": self.name, "kind": self.kind, "inputs": list(self.inputs), "spec": spec}


def infer_layer_shape(layer: LayerSpec, in_shapes: list[tuple[int, ...]]) -> tuple[int, ...]:
    """Per-sample output shape of ``layer`` from its per-sample input shapes."""
    k = layer.kind
    s = layer.spec
    x = tuple(in_shapes[0])
    if k == "add":
        if len(in_shapes) != 2 or tuple(in_shapes[0]) != tuple(in_shapes[1]):
            raise DimensionError(f"{layer.name}: add needs two equal shapes, got {in_shapes}")
        return x
    if len(in_shapes) != 1:
        raise DimensionError(f"{layer.name}: {k} takes exactly one input")
    if k in ("conv2d", "conv3d"):
        nd = 2 if k == "conv2d" else 3
        if s.ndim != nd:
            raise DimensionError(f"{layer.name}: {k} with a {s.ndim}-d kernel")
        if len(x) != nd + 1 or x[0] != s.in_channels:
            raise DimensionError(
                f"{layer.name}: input shape {x} incompatible with {k} over "
                f"{s.in_channels} channels")
        return (s.out_channels,) + s.output_extent(x[1:])
    if k == "batch_norm":
        if x[0] != s.channels:
            raise DimensionError(f"{layer.name}: batch_norm over {s.channels} channels, "
                                 f"input shape {x}")
        return x
    if k == "relu":
        return x
    if k == "pool":
        if len(x) != s.ndim + 1:
            raise DimensionError(f"{layer.name}: {s.ndim}-d pool on input shape {x}")
        return x[:1] + s.output_extent(x[1:])
    if k == "global_avg_pool":
        return x[:1] + (1,) * (len(x) - 1)
    if k == "flatten":
        return (int(np.prod(x)),)
    if k == "linear":
        if x != (s.in_features,):
            raise DimensionError(f"{layer.name}: linear expects ({s.in_features},), got {x}")
        return (s.out_features,)
    raise ConfigurationError(f"unknown layer kind {k!r}")


def propagate_shapes(layers: Iterable[LayerSpec], input_name: str, input_shape,
                     batched: bool = False) -> dict[str, tuple[int, ...]]:
    """Shape of every named value, starting from ``input_shape``.

    With ``batched=True`` the leading axis of ``input_shape`` is the batch.
    """
    shapes = {input_name: tuple(int(a) for a in input_shape)}
    for layer in layers:
        missing = [i for i in layer.inputs if i not in shapes]
        if missing:
            raise StructuralError(f"{layer.name}: unknown input(s) {missing}")
        ins = [shapes[i] for i in layer.inputs]
        if batched:
            # strip batch, infer, restore
            out = infer_layer_shape(layer, [t[1:] for t in ins])
            shapes[layer.name] = (ins[0][0],) + out
        else:
            shapes[layer.name] = infer_layer_shape(layer, ins)
    return shapes


@dataclass
class GraphSpec:
    """A validated network description.

    ``input_shape`` is the per-sample signature ``(C, *spatial)``; the batch
    extent is free.
    """

    name: str
    input_shape: tuple[int, ...]
    layers: list[LayerSpec]
    output: str
    input_name: str = "input"
    shapes: dict[str, tuple[int, ...]] = field(default_factory=dict, repr=False)
    param_shapes: dict[str, tuple[int, ...]] = field(default_factory=dict, repr=False)
    buffer_shapes: dict[str, tuple[int, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.input_shape = tuple(int(a) for a in self.input_shape)
        names = {self.input_name}
        for layer in self.layers:
            if layer.name in names:
                raise StructuralError(f"duplicate layer name {layer.name!r}")
            names.add(layer.name)
        if self.output not in names:
            raise StructuralError(f"graph output {self.output!r} is not a layer")
        self.shapes = propagate_shapes(self.layers, self.input_name, self.input_shape)
        self.param_shapes = {}
        self.buffer_shapes = {}
        for layer in self.layers:
            for pname, shape in layer.param_shapes().items():
                if pname in self.param_shapes:
                    raise StructuralError(f"duplicate parameter name {pname!r}")
                self.param_shapes[pname] = tuple(shape)
            for bname in layer.buffer_names:
                self.buffer_shapes[bname] = (layer.spec.channels,)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[self.output]

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def canonical(self) -> dict:
        return {"name": self.name, "input_name": self.input_name,
                "input_shape": list(self.input_shape), "output": self.output,
                "layers": [layer.canonical() for layer in self.layers]}

    def fingerprint(self) -> bytes:
        """SHA-256 of the canonical JSON form."""
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).digest()


class GraphBuilder:
    """Incrementally assembles layers while tracking per-sample shapes."""

    def __init__(self, input_shape, input_name: str = "input", name: str = "graph"):
        self.name = name
        self.input_name = input_name
        self.input_shape = tuple(int(a) for a in input_shape)
        self.layers: list[LayerSpec] = []
        self.shapes: dict[str, tuple[int, ...]] = {input_name: self.input_shape}

    def _add(self, name, kind, inputs, spec=None) -> str:
        if name in self.shapes:
            raise StructuralError(f"duplicate layer name {name!r}")
        layer = LayerSpec(name, kind, tuple(inputs), spec)
        self.shapes[name] = infer_layer_shape(layer, [self.shapes[i] for i in layer.inputs])
        self.layers.append(layer)
        return name

    def channels(self, src: str) -> int:
        return self.shapes[src][0]

    def conv(self, name, src, out_channels, kernel, stride=1, padding=0, groups=1,
             bias=False, padding_mode="zeros") -> str:
        nd = len(kernel)
        spec = tc.ConvSpec(self.channels(src), out_channels, tuple(kernel),
                           tc._tuple(stride, nd, "stride"), tc._tuple(padding, nd, "padding"),
                           groups, padding_mode, bias)
        return self._add(name, "conv2d" if nd == 2 else "conv3d", [src], spec)

    def bn(self, name, src, eps=1e-5, momentum=0.9) -> str:
        return self._add(name, "batch_norm", [src], BatchNormSpec(self.channels(src), eps, momentum))

    def relu(self, name, src) -> str:
        return self._add(name, "relu", [src])

    def add(self, name, a, b) -> str:
        return self._add(name, "add", [a, b])

    def pool(self, name, src, mode, window, stride=None, padding=0) -> str:
        nd = len(window)
        spec = tc.PoolSpec(mode, tuple(window), tc._tuple(stride or window, nd, "stride"),
                           tc._tuple(padding, nd, "padding"))
        return self._add(name, "pool", [src], spec)

    def global_avg_pool(self, name, src) -> str:
        return self._add(name, "global_avg_pool", [src])

    def flatten(self, name, src) -> str:
        return self._add(name, "flatten", [src])

    def linear(self, name, src, out_features, bias=True) -> str:
        return self._add(name, "linear", [src],
                         LinearSpec(self.shapes[src][-1], out_features, bias))

    def build(self, output: str | None = None) -> GraphSpec:
        out = output or (self.layers[-1].name if self.layers else self.input_name)
        return GraphSpec(self.name, self.input_shape, list(self.layers), out, self.input_name)


# --------------------------------------------------------------------------
# parameters


@dataclass
class ParamStore:
    """Learnable tensors, their gradient slots, and batch-norm running statistics."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.buffers.items()},
                          {k: v.copy() for k, v in self.grads.items()})

    def tensors(self) -> dict[str, np.ndarray]:
        """All named tensors: parameters first, then buffers."""
        return {**self.params, **self.buffers}

    def num_learnable(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({k: v.astype(dtype) for k, v in self.params.items()},
                          {k: v.astype(dtype) for k, v in self.buffers.items()})

    def validate(self, graph: GraphSpec):
        """Raise :class:`StructuralError` unless names and shapes match ``graph`` exactly."""
        for table, store, what in ((graph.param_shapes, self.params, "parameter"),
                                   (graph.buffer_shapes, self.buffers, "buffer")):
            missing = [k for k in table if k not in store]
            if missing:
                raise StructuralError(f"{what} missing for graph {graph.name!r}: {missing[0]}"
                                      + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
            extra = [k for k in store if k not in table]
            if extra:
                raise StructuralError(f"unknown {what} for graph {graph.name!r}: {extra[0]}")
            for k, shape in table.items():
                if store[k].shape != shape:
                    raise StructuralError(
                        f"{what} {k!r} has shape {store[k].shape}, graph expects {shape}")


def init_params(graph: GraphSpec, seed: int, dtype=np.float64) -> ParamStore:
    """He-style initialization, fully determined by ``seed``.

    Conv/linear weights ~ N(0, 2/fan_in) with fan_in = (C/G) * kernel volume
    (or input features); biases and BN beta are 0, BN gamma 1, running mean 0
    and running variance 1.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for layer in graph.layers:
        for pname, shape in layer.param_shapes().items():
            if pname.endswith(".weight"):
                fan_in = int(np.prod(shape[1:]))
                w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
                store.params[pname] = w.astype(dtype)
            elif pname.endswith(".gamma"):
                store.params[pname] = np.ones(shape, dtype=dtype)
            else:
                store.params[pname] = np.zeros(shape, dtype=dtype)
        for bname in layer.buffer_names:
            c = layer.spec.channels
            fill = np.ones if bname.endswith("running_var") else np.zeros
            store.buffers[bname] = fill((c,), dtype=dtype)
    store.zero_grad()
    return store


# --------------------------------------------------------------------------
# forward / backward


@dataclass
class Retained:
    """Activations and kernel caches kept by a training-mode forward pass."""

    mode: str
    values: dict[str, np.ndarray]
    caches: dict[str, object]
    consumed: bool = False


def _layer_forward(layer: LayerSpec, ins, params: ParamStore, training: bool, algorithm: str):
    k = layer.kind
    s = layer.spec
    x = ins[0]
    if k in ("conv2d", "conv3d"):
        bias = params.params.get(f"{layer.name}.bias") if s.bias else None
        return tc.conv_forward(x, params.params[f"{layer.name}.weight"], bias, s, algorithm), None
    if k == "batch_norm":
        n = layer.name
        if training:
            return tc.batch_norm_forward(x, params.params[f"{n}.gamma"], params.params[f"{n}.beta"],
                                         params.buffers[f"{n}.running_mean"],
                                         params.buffers[f"{n}.running_var"], True, s.eps,
                                         s.momentum)
        return tc.batch_norm_forward(x, params.params[f"{n}.gamma"], params.params[f"{n}.beta"],
                                     params.buffers[f"{n}.running_mean"].copy(),
                                     params.buffers[f"{n}.running_var"].copy(), False, s.eps,
                                     s.momentum)
    if k == "relu":
        return tc.relu(x), None
    if k == "add":
        return ins[0] + ins[1], None
    if k == "pool":
        return tc.pool_forward(x, s)
    if k == "global_avg_pool":
        spec = tc.PoolSpec("avg", x.shape[2:])
        return tc.pool_forward(x, spec)[0], spec
    if k == "flatten":
        return x.reshape(x.shape[0], -1), None
    if k == "linear":
        bias = params.params.get(f"{layer.name}.bias") if s.bias else None
        return tc.linear(x, params.params[f"{layer.name}.weight"], bias), None
    raise ConfigurationError(f"unknown layer kind {k!r}")


def forward(graph: GraphSpec, params: ParamStore, x: np.ndarray, mode: str = "infer",
            algorithm: str = "direct", keep: bool | None = None):
    """Evaluate ``graph`` on ``x``. Returns ``(output, retained)``.

    ``mode="train"`` uses batch statistics, updates BN running stats and
    retains what :func:`backward` needs.  ``mode="infer"`` mutates nothing.
    ``keep=True`` retains every activation in infer mode as well (used for
    per-layer comparisons).
    """
    if mode not in ("train", "infer"):
        raise ConfigurationError(f"mode must be 'train' or 'infer', got {mode!r}")
    if x.ndim != len(graph.input_shape) + 1 or tuple(x.shape[1:]) != graph.input_shape:
        raise DimensionError(f"input shape {x.shape} does not match signature "
                             f"(B, {', '.join(map(str, graph.input_shape))}) of {graph.name!r}")
    for pname in graph.param_shapes:
        if pname not in params.params:
            raise StructuralError(f"unknown parameter {pname!r} (not in store)")
    training = mode == "train"
    keep = training if keep is None else keep
    values = {graph.input_name: x}
    caches = {}
    for layer in graph.layers:
        out, cache = _layer_forward(layer, [values[i] for i in layer.inputs], params, training,
                                    algorithm)
        values[layer.name] = out
        caches[layer.name] = cache
    y = values[graph.output]
    if not keep:
        values, caches = {}, {}
    return y, Retained(mode, values, caches)


def backward(graph: GraphSpec, params: ParamStore, retained: Retained | None,
             loss_grad: np.ndarray) -> np.ndarray:
    """Back-propagate ``loss_grad`` (d loss / d output) through ``graph``.

    Fills ``params.grads`` for every parameter (overwriting) and returns the
    gradient with respect to the graph input.
    """
    if retained is None or retained.mode != "train" or not retained.values:
        raise ContractError("backward needs the retained state of a train-mode forward pass")
    if retained.consumed:
        raise ContractError("retained state was already consumed by a backward pass")
    values = retained.values
    if loss_grad.shape != values[graph.output].shape:
        raise DimensionError(f"loss gradient shape {loss_grad.shape} != output shape "
                             f"{values[graph.output].shape}")
    grads: dict[str, np.ndarray] = {graph.output: loss_grad}
    params.grads = {k: np.zeros_like(v) for k, v in params.params.items()}

    def accumulate(name, g):
        if name in grads:
            grads[name] = grads[name] + g
        else:
            grads[name] = g

    for layer in reversed(graph.layers):
        dy = grads.pop(layer.name, None)
        if dy is None:
            continue
        k = layer.kind
        s = layer.spec
        n = layer.name
        x = values[layer.inputs[0]]
        if k in ("conv2d", "conv3d"):
            dx, dw, db = tc.conv_backward(dy, x, params.params[f"{n}.weight"], s)
            params.grads[f"{n}.weight"] += dw
            if s.bias:
                params.grads[f"{n}.bias"] += db
            accumulate(layer.inputs[0], dx)
        elif k == "batch_norm":
            dx, dg, db = tc.batch_norm_backward(dy, params.params[f"{n}.gamma"],
                                                retained.caches[n])
            params.grads[f"{n}.gamma"] += dg
            params.grads[f"{n}.beta"] += db
            accumulate(layer.inputs[0], dx)
        elif k == "relu":
            accumulate(layer.inputs[0], tc.relu_backward(dy, x))
        elif k == "add":
            accumulate(layer.inputs[0], dy)
            accumulate(layer.inputs[1], dy)
        elif k == "pool":
            accumulate(layer.inputs[0], tc.pool_backward(dy, x.shape, s, retained.caches[n]))
        elif k == "global_avg_pool":
            accumulate(layer.inputs[0],
                       tc.pool_backward(dy, x.shape, retained.caches[n], None))
        elif k == "flatten":
            accumulate(layer.inputs[0], dy.reshape(x.shape))
        elif k == "linear":
            dx, dw, db = tc.linear_backward(dy, x, params.params[f"{n}.weight"])
            params.grads[f"{n}.weight"] += dw
            if s.bias:
                params.grads[f"{n}.bias"] += db
            accumulate(layer.inputs[0], dx)
    retained.consumed = True
    dx = grads.get(graph.input_name)
    if dx is None:
        dx = np.zeros_like(values[graph.input_name])
    return dx

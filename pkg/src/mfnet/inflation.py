"""Initialize a 3D network from a 2D checkpoint by temporal kernel replication.

A 2D kernel ``K`` of shape ``(O, C/G, kh, kw)`` becomes ``(O, C/G, kt, kh, kw)``
with every temporal slice equal to ``K / kt``, so a clip that is constant in
time produces the same activations as the 2D network on one frame.  The last
slice absorbs the floating-point residual of the division so that summing the
slices in temporal order returns ``K`` bit for bit; it differs from the other
slices by at most a few ulp.  Everything else (BN affine parameters, running
statistics, biases, FC weights) is copied verbatim.
"""

from __future__ import annotations

import numpy as np

from .checkpoint import Checkpoint, checkpoint_from_store, store_from_checkpoint
from .errors import StructuralError
from .graph import GraphSpec, ParamStore


def temporal_slice_sum(kernel: np.ndarray) -> np.ndarray:
    """Sum a 3D kernel over its temporal axis (axis 2) in order t = 0, 1, ..."""
    total = kernel[:, :, 0].copy()
    for t in range(1, kernel.shape[2]):
        total = total + kernel[:, :, t]
    return total


def inflate_kernel(k2d: np.ndarray, kt: int) -> np.ndarray:
    if kt < 1:
        raise ValueError(f"temporal extent must be >= 1, got {kt}")
    if kt == 1:
        return k2d[:, :, None].copy()
    part = k2d / kt
    out = np.repeat(part[:, :, None], kt, axis=2)
    partial = temporal_slice_sum(out[:, :, :-1])
    out[:, :, -1] = k2d - partial
    return out


def _check_pair(l2, l3):
    name = l3.name
    if l2.inputs != l3.inputs:
        raise StructuralError(f"layer {name!r}: inputs differ between 2D and 3D graphs")
    if l2.kind == "conv2d" and l3.kind == "conv3d":
        s2, s3 = l2.spec, l3.spec
        if (s2.in_channels, s2.out_channels, s2.groups, s2.bias) != \
                (s3.in_channels, s3.out_channels, s3.groups, s3.bias):
            raise StructuralError(f"layer {name!r}: channel/group layout differs")
        if s2.kernel != s3.kernel[1:] or s2.stride != s3.stride[1:] or \
                s2.padding != s3.padding[1:]:
            raise StructuralError(f"layer {name!r}: spatial kernel {s2.kernel} vs "
                                  f"{s3.kernel[1:]} (or stride/padding) mismatch")
        return
    if l2.kind != l3.kind:
        raise StructuralError(f"layer {name!r}: kind {l2.kind} cannot inflate to {l3.kind}")
    if l2.kind in ("batch_norm", "linear") and l2.param_shapes() != l3.param_shapes():
        raise StructuralError(f"layer {name!r}: parameter shapes differ")
    if l2.kind == "pool":
        s2, s3 = l2.spec, l3.spec
        if s2.mode != s3.mode or s2.window != s3.window[1:] or s2.stride != s3.stride[1:]:
            raise StructuralError(f"layer {name!r}: spatial pooling differs")


def inflate_tensors(tensors: dict[str, np.ndarray], graph2d: GraphSpec,
                    graph3d: GraphSpec) -> dict[str, np.ndarray]:
    names2 = [layer.name for layer in graph2d.layers]
    names3 = [layer.name for layer in graph3d.layers]
    for n in names3:
        if n not in names2:
            raise StructuralError(f"layer {n!r} of {graph3d.name!r} has no 2D counterpart")
    for n in names2:
        if n not in names3:
            raise StructuralError(f"layer {n!r} of {graph2d.name!r} is missing from 3D graph")
    out = {}
    for l3 in graph3d.layers:
        l2 = graph2d.layer(l3.name)
        _check_pair(l2, l3)
        for pname in list(l3.param_shapes()) + list(l3.buffer_names):
            if pname not in tensors:
                raise StructuralError(f"layer {l3.name!r}: source lacks {pname!r}")
            src = tensors[pname]
            if l3.kind == "conv3d" and pname.endswith(".weight"):
                out[pname] = inflate_kernel(src, l3.spec.kernel[0])
            else:
                out[pname] = src.copy()
    return out


def inflate_checkpoint(ckpt2d: Checkpoint, graph2d: GraphSpec, graph3d: GraphSpec) -> Checkpoint:
    """Inflate a checkpoint of ``graph2d`` into one for ``graph3d``."""
    if ckpt2d.fingerprint != graph2d.fingerprint():
        raise StructuralError(f"source checkpoint does not belong to graph {graph2d.name!r}")
    tensors = inflate_tensors(ckpt2d.tensors, graph2d, graph3d)
    store = ParamStore({k: tensors[k] for k in graph3d.param_shapes},
                       {k: tensors[k] for k in graph3d.buffer_shapes})
    meta = dict(ckpt2d.metadata)
    meta.update({"graph": graph3d.name, "inflated_from": ckpt2d.fingerprint.hex()})
    return checkpoint_from_store(store, graph3d, meta)


def inflate_params(store2d: ParamStore, graph2d: GraphSpec, graph3d: GraphSpec) -> ParamStore:
    """Store-level convenience wrapper around :func:`inflate_checkpoint`."""
    ckpt = checkpoint_from_store(store2d, graph2d)
    return store_from_checkpoint(inflate_checkpoint(ckpt, graph2d, graph3d), graph3d)

"""Dense numeric kernels: grouped convolution, pooling, batch norm, linear maps.

Tensors are plain numpy arrays in C order (outermost axis first, last axis
contiguous) holding ``float32`` or ``float64``.  Activations are laid out as
``(batch, channels, *spatial)`` where ``spatial`` is ``(H, W)`` for 2D and
``(T, H, W)`` for 3D data.

Every forward kernel has a matching ``*_backward`` that returns gradients for
its inputs.  Convolution is computed by direct summation: for each kernel tap
the shifted input window is contracted with that tap's weights over the
group's input channels and accumulated.  An im2col path is available behind
``algorithm="im2col"``; it regroups the same products into one matmul and
agrees with the reference to ~1e-13 in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
PADDING_MODES = ("zeros", "replicate")


def as_tensor(x, dtype=np.float64) -> np.ndarray:
    """Return ``x`` as a C-contiguous array of a supported precision."""
    arr = np.ascontiguousarray(x, dtype=dtype)
    if arr.dtype not in SUPPORTED_DTYPES:
        raise ConfigurationError(f"unsupported precision {arr.dtype}")
    return arr


def _tuple(v, n: int, what: str) -> tuple[int, ...]:
    if np.isscalar(v):
        return (int(v),) * n
    t = tuple(int(a) for a in v)
    if len(t) != n:
        raise ConfigurationError(f"{what} needs {n} entries, got {len(t)}")
    return t


@dataclass(frozen=True)
class ConvSpec:
    """Hyperparameters of a (grouped) 2D or 3D convolution.

    ``padding_mode`` selects how the *temporal* axis of a 3D convolution is
    padded: ``"zeros"`` or ``"replicate"`` (clamp to the valid range).
    Spatial axes are always zero padded.
    """

    in_channels: int
    out_channels: int
    kernel: tuple[int, ...]
    stride: tuple[int, ...] = ()
    padding: tuple[int, ...] = ()
    groups: int = 1
    padding_mode: str = "zeros"
    bias: bool = False

    def __post_init__(self):
        nd = len(self.kernel)
        if nd not in (2, 3):
            raise ConfigurationError(f"kernel must have 2 or 3 axes, got {self.kernel}")
        object.__setattr__(self, "kernel", _tuple(self.kernel, nd, "kernel"))
        object.__setattr__(self, "stride", _tuple(self.stride or 1, nd, "stride"))
        object.__setattr__(self, "padding", _tuple(self.padding or 0, nd, "padding"))
        if self.groups < 1:
            raise ConfigurationError(f"groups must be positive, got {self.groups}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigurationError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}")
        if any(k < 1 for k in self.kernel) or any(s < 1 for s in self.stride):
            raise ConfigurationError("kernel extents and strides must be positive")
        if any(p < 0 for p in self.padding):
            raise ConfigurationError("padding must be non-negative")
        if self.padding_mode not in PADDING_MODES:
            raise ConfigurationError(f"padding_mode must be one of {PADDING_MODES}")

    @property
    def ndim(self) -> int:
        return len(self.kernel)

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels // self.groups) + self.kernel

    def axis_modes(self) -> tuple[str, ...]:
        if self.ndim == 3:
            return (self.padding_mode, "zeros", "zeros")
        return ("zeros",) * self.ndim

    def output_extent(self, extent: Sequence[int]) -> tuple[int, ...]:
        return output_extent(extent, self.kernel, self.stride, self.padding)


def output_extent(extent, kernel, stride, padding) -> tuple[int, ...]:
    out = []
    for n, k, s, p in zip(extent, kernel, stride, padding):
        o = (n + 2 * p - k) // s + 1
        if n + 2 * p < k or o < 1:
            raise DimensionError(
                f"window {k} does not fit input extent {n} with padding {p}")
        out.append(o)
    return tuple(out)


# --------------------------------------------------------------------------
# padding helpers


def _pad(x: np.ndarray, padding, modes) -> np.ndarray:
    nd = len(padding)
    if not any(padding):
        return x
    if all(m == "zeros" for m in modes):
        return np.pad(x, [(0, 0)] * (x.ndim - nd) + [(p, p) for p in padding])
    out = x
    for ax, (p, m) in enumerate(zip(padding, modes)):
        if p == 0:
            continue
        widths = [(0, 0)] * out.ndim
        widths[x.ndim - nd + ax] = (p, p)
        out = np.pad(out, widths, mode="edge" if m == "replicate" else "constant")
    return out


def _unpad(dxp: np.ndarray, padding, modes) -> np.ndarray:
    """Adjoint of :func:`_pad`: fold padded-cell gradients back onto the input."""
    nd = len(padding)
    out = dxp
    for ax, (p, m) in enumerate(zip(padding, modes)):
        if p == 0:
            continue
        axis = dxp.ndim - nd + ax
        n = out.shape[axis] - 2 * p
        core = np.take(out, np.arange(p, p + n), axis=axis)
        if m == "replicate":
            core = core.copy()
            lead = [slice(None)] * out.ndim
            lead[axis] = slice(0, p)
            tail = [slice(None)] * out.ndim
            tail[axis] = slice(p + n, None)
            first = [slice(None)] * out.ndim
            first[axis] = slice(0, 1)
            last = [slice(None)] * out.ndim
            last[axis] = slice(n - 1, n)
            core[tuple(first)] += out[tuple(lead)].sum(axis=axis, keepdims=True)
            core[tuple(last)] += out[tuple(tail)].sum(axis=axis, keepdims=True)
        out = core
    return np.ascontiguousarray(out)


def _tap_slices(tap, stride, out_sz):
    return tuple(slice(t, t + s * (o - 1) + 1, s) for t, s, o in zip(tap, stride, out_sz))


# --------------------------------------------------------------------------
# convolution


def _check_conv(x: np.ndarray, weight: np.ndarray, bias, spec: ConvSpec):
    nd = spec.ndim
    if x.ndim != nd + 2:
        raise DimensionError(f"conv{nd}d expects a {nd + 2}-d input, got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise DimensionError(
            f"input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if weight.shape != spec.weight_shape:
        raise DimensionError(
            f"weight shape {weight.shape} does not match spec {spec.weight_shape}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise DimensionError(f"bias shape {bias.shape} != ({spec.out_channels},)")
    return spec.output_extent(x.shape[2:])


def conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None,
                 spec: ConvSpec, algorithm: str = "direct") -> np.ndarray:
    """Grouped N-d convolution (cross-correlation) of ``x`` with ``weight``."""
    out_sz = _check_conv(x, weight, bias, spec)
    B = x.shape[0]
    G = spec.groups
    Cg = spec.in_channels // G
    Og = spec.out_channels // G
    P = int(np.prod(out_sz))
    xp = _pad(x, spec.padding, spec.axis_modes())
    xg = xp.reshape((B, G, Cg) + xp.shape[2:])
    wg = weight.reshape((G, Og, Cg) + spec.kernel)
    taps = list(np.ndindex(*spec.kernel))
    if algorithm == "direct":
        out = np.zeros((B, G, Og, P), dtype=x.dtype)
        for tap in taps:
            xs = xg[(slice(None),) * 3 + _tap_slices(tap, spec.stride, out_sz)]
            out += wg[(slice(None),) * 3 + tap] @ xs.reshape(B, G, Cg, P)
    elif algorithm == "im2col":
        cols = np.empty((B, G, Cg, len(taps), P), dtype=x.dtype)
        for i, tap in enumerate(taps):
            xs = xg[(slice(None),) * 3 + _tap_slices(tap, spec.stride, out_sz)]
            cols[:, :, :, i, :] = xs.reshape(B, G, Cg, P)
        out = wg.reshape(G, Og, Cg * len(taps)) @ cols.reshape(B, G, Cg * len(taps), P)
    else:
        raise ConfigurationError(f"unknown convolution algorithm {algorithm!r}")
    out = out.reshape((B, spec.out_channels) + out_sz)
    if bias is not None:
        out += bias.reshape((1, -1) + (1,) * spec.ndim)
    return out


def conv_backward(dy: np.ndarray, x: np.ndarray, weight: np.ndarray, spec: ConvSpec,
                  need_input_grad: bool = True):
    """Return ``(dx, dweight, dbias)`` for :func:`conv_forward`."""
    out_sz = dy.shape[2:]
    B = x.shape[0]
    G = spec.groups
    Cg = spec.in_channels // G
    Og = spec.out_channels // G
    P = int(np.prod(out_sz))
    modes = spec.axis_modes()
    xp = _pad(x, spec.padding, modes)
    xg = xp.reshape((B, G, Cg) + xp.shape[2:])
    wg = weight.reshape((G, Og, Cg) + spec.kernel)
    dyg = dy.reshape(B, G, Og, P)
    dw = np.zeros((G, Og, Cg) + spec.kernel, dtype=x.dtype)
    dxg = np.zeros_like(xg) if need_input_grad else None
    for tap in np.ndindex(*spec.kernel):
        sl = (slice(None),) * 3 + _tap_slices(tap, spec.stride, out_sz)
        xs = xg[sl].reshape(B, G, Cg, P)
        dw[(slice(None),) * 3 + tap] = (dyg @ xs.transpose(0, 1, 3, 2)).sum(axis=0)
        if need_input_grad:
            wt = wg[(slice(None),) * 3 + tap].transpose(0, 2, 1)
            dxg[sl] += (wt @ dyg).reshape((B, G, Cg) + tuple(out_sz))
    dbias = dy.sum(axis=(0,) + tuple(range(2, dy.ndim)))
    dx = None
    if need_input_grad:
        dx = _unpad(dxg.reshape(xp.shape), spec.padding, modes)
    return dx, dw.reshape(weight.shape), dbias


def conv2d(x, weight, bias=None, spec: ConvSpec | None = None, *, stride=1, padding=0,
           groups=1, algorithm: str = "direct") -> np.ndarray:
    """2D convolution; builds a :class:`ConvSpec` from keywords when none is given."""
    if spec is None:
        spec = ConvSpec(x.shape[1], weight.shape[0], tuple(weight.shape[2:]), _tuple(stride, 2, "stride"),
                        _tuple(padding, 2, "padding"), groups, bias=bias is not None)
    if spec.ndim != 2:
        raise DimensionError("conv2d needs a 2D ConvSpec")
    return conv_forward(x, weight, bias, spec, algorithm)


def conv3d(x, weight, bias=None, spec: ConvSpec | None = None, *, stride=1, padding=0,
           groups=1, padding_mode="zeros", algorithm: str = "direct") -> np.ndarray:
    """3D convolution; ``padding_mode`` applies to the temporal axis only."""
    if spec is None:
        spec = ConvSpec(x.shape[1], weight.shape[0], tuple(weight.shape[2:]), _tuple(stride, 3, "stride"),
                        _tuple(padding, 3, "padding"), groups, padding_mode, bias is not None)
    if spec.ndim != 3:
        raise DimensionError("conv3d needs a 3D ConvSpec")
    return conv_forward(x, weight, bias, spec, algorithm)


# --------------------------------------------------------------------------
# pooling


@dataclass(frozen=True)
class PoolSpec:
    mode: str
    window: tuple[int, ...]
    stride: tuple[int, ...] = ()
    padding: tuple[int, ...] = ()

    def __post_init__(self):
        nd = len(self.window)
        if self.mode not in ("max", "avg"):
            raise ConfigurationError(f"pool mode must be 'max' or 'avg', got {self.mode!r}")
        object.__setattr__(self, "window", _tuple(self.window, nd, "window"))
        object.__setattr__(self, "stride", _tuple(self.stride or self.window, nd, "stride"))
        object.__setattr__(self, "padding", _tuple(self.padding or 0, nd, "padding"))
        if any(w < 1 for w in self.window) or any(s < 1 for s in self.stride):
            raise ConfigurationError("pool window and stride must be positive")
        if any(p < 0 for p in self.padding):
            raise ConfigurationError("pool padding must be non-negative")

    @property
    def ndim(self) -> int:
        return len(self.window)

    def output_extent(self, extent) -> tuple[int, ...]:
        for n, w, p in zip(extent, self.window, self.padding):
            if w > n + 2 * p:
                raise ConfigurationError(
                    f"pool window {w} larger than padded input extent {n + 2 * p}")
        return output_extent(extent, self.window, self.stride, self.padding)


def pool_forward(x: np.ndarray, spec: PoolSpec):
    """Max or average pooling. Returns ``(y, cache)``; cache feeds the backward.

    Average pooling divides by the full window size, so zero padding counts
    toward the mean.  Max pooling pads with ``-inf`` and breaks ties in
    favour of the first tap in row-major kernel order.
    """
    if x.ndim != spec.ndim + 2:
        raise DimensionError(f"pool expects a {spec.ndim + 2}-d input, got {x.shape}")
    out_sz = spec.output_extent(x.shape[2:])
    pad_width = [(0, 0), (0, 0)] + [(p, p) for p in spec.padding]
    taps = list(np.ndindex(*spec.window))
    if spec.mode == "max":
        xp = np.pad(x, pad_width, constant_values=-np.inf) if any(spec.padding) else x
        y = None
        arg = np.zeros(x.shape[:2] + out_sz, dtype=np.intp)
        for i, tap in enumerate(taps):
            xs = xp[(slice(None),) * 2 + _tap_slices(tap, spec.stride, out_sz)]
            if y is None:
                y = xs.copy()
            else:
                better = xs > y
                y = np.where(better, xs, y)
                arg[better] = i
        return y, arg
    xp = np.pad(x, pad_width) if any(spec.padding) else x
    y = np.zeros(x.shape[:2] + out_sz, dtype=x.dtype)
    for tap in taps:
        y += xp[(slice(None),) * 2 + _tap_slices(tap, spec.stride, out_sz)]
    y /= len(taps)
    return y, None


def pool_backward(dy: np.ndarray, x_shape, spec: PoolSpec, cache) -> np.ndarray:
    out_sz = dy.shape[2:]
    padded = x_shape[:2] + tuple(n + 2 * p for n, p in zip(x_shape[2:], spec.padding))
    dxp = np.zeros(padded, dtype=dy.dtype)
    taps = list(np.ndindex(*spec.window))
    for i, tap in enumerate(taps):
        sl = (slice(None),) * 2 + _tap_slices(tap, spec.stride, out_sz)
        if spec.mode == "max":
            dxp[sl] += np.where(cache == i, dy, 0.0)
        else:
            dxp[sl] += dy / len(taps)
    core = (slice(None),) * 2 + tuple(slice(p, p + n) for p, n in zip(spec.padding, x_shape[2:]))
    return np.ascontiguousarray(dxp[core])


def pool(x, mode: str, window, stride=None, pad=0) -> np.ndarray:
    nd = x.ndim - 2
    spec = PoolSpec(mode, _tuple(window, nd, "window"),
                    _tuple(stride if stride is not None else window, nd, "stride"),
                    _tuple(pad, nd, "padding"))
    return pool_forward(x, spec)[0]


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Average over every axis after the channel axis, keeping them as extent 1."""
    return pool(x, "avg", x.shape[2:])


# --------------------------------------------------------------------------
# batch normalization


def batch_norm_forward(x, gamma, beta, running_mean, running_var, training: bool,
                       eps: float = 1e-5, momentum: float = 0.9):
    """Per-channel batch normalization.

    In training mode the batch mean and *biased* variance normalize ``x`` and
    the running statistics are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    Inference mode reads the running statistics and mutates nothing.
    Returns ``(y, cache)``.
    """
    C = x.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean),
                    ("running_var", running_var)):
        if t.shape != (C,):
            raise DimensionError(f"batch_norm {name} has shape {t.shape}, expected ({C},)")
    if not eps > 0:
        raise ConfigurationError(f"batch_norm eps must be positive, got {eps}")
    bshape = (1, C) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    if training:
        mean = x.mean(axis=axes)
        xc = x - mean.reshape(bshape)
        var = (xc * xc).mean(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
        xc = x - mean.reshape(bshape)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std.reshape(bshape)
    y = xhat * gamma.reshape(bshape) + beta.reshape(bshape)
    return y, (xhat, inv_std, training)


def batch_norm_backward(dy, gamma, cache):
    """Return ``(dx, dgamma, dbeta)``; train mode differentiates through batch stats."""
    xhat, inv_std, training = cache
    C = dy.shape[1]
    bshape = (1, C) + (1,) * (dy.ndim - 2)
    axes = (0,) + tuple(range(2, dy.ndim))
    dbeta = dy.sum(axis=axes)
    dgamma = (dy * xhat).sum(axis=axes)
    g = (gamma * inv_std).reshape(bshape)
    if not training:
        return dy * g, dgamma, dbeta
    m = dy.size // C
    dx = g / m * (m * dy - dbeta.reshape(bshape) - xhat * dgamma.reshape(bshape))
    return dx, dgamma, dbeta


def batch_norm(x, gamma, beta, running_mean, running_var, mode: str = "train",
               eps: float = 1e-5, momentum: float = 0.9) -> np.ndarray:
    if mode not in ("train", "infer"):
        raise ConfigurationError(f"mode must be 'train' or 'infer', got {mode!r}")
    return batch_norm_forward(x, gamma, beta, running_mean, running_var,
                              mode == "train", eps, momentum)[0]


# --------------------------------------------------------------------------
# linear map, relu


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"linear: input {x.shape} incompatible with weight {weight.shape}")
    y = x @ weight.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear bias {bias.shape} != ({weight.shape[0]},)")
        y += bias
    return y


def linear_backward(dy, x, weight):
    return dy @ weight, dy.T @ x, dy.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, dy, 0)


# --------------------------------------------------------------------------
# loss


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of integer ``labels``; returns ``(loss, dlogits)``."""
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} vs labels {labels.shape}")
    B = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = float(-logp[np.arange(B), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(B), labels] -= 1.0
    return loss, grad / B


# --------------------------------------------------------------------------
# gradient verification


def finite_difference_check(f: Callable[[np.ndarray], tuple], x: np.ndarray, h: float = 1e-4,
                            coords: Sequence[int] | None = None) -> float:
    """Compare an analytic gradient with central differences.

    ``f(x)`` must return ``(value, grad)`` where ``value`` is a scalar and
    ``grad`` has the shape of ``x``.  Returns
    ``max_i |grad_i - fd_i| / max(1, |grad_i|)`` over ``coords`` (flat
    indices; all coordinates by default).  ``x`` is not modified.
    """
    x = np.array(x, dtype=np.float64)
    value, grad = f(x.copy())
    if np.ndim(value) != 0:
        raise ContractError(f"finite_difference_check needs a scalar function, got shape "
                            f"{np.shape(value)}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x.shape:
        raise ContractError(f"gradient shape {grad.shape} != input shape {x.shape}")
    idx = range(x.size) if coords is None else coords
    flat_grad = grad.reshape(-1)
    worst = 0.0
    for i in idx:
        xp = x.copy()
        xp.reshape(-1)[i] += h
        xm = x.copy()
        xm.reshape(-1)[i] -= h
        fd = (float(f(xp)[0]) - float(f(xm)[0])) / (2 * h)
        a = flat_grad[i]
        worst = max(worst, abs(a - fd) / max(1.0, abs(a)))
    return worst

"""Multiplexer and multi-fiber unit builders, plus connection-count arithmetic.

A multi-fiber unit slices a two-convolution residual body into ``N``
isolated paths, realized as grouped convolutions with ``groups=N``.  The
multiplexer is a residual 1x1 bottleneck (``C -> C/k -> C``) placed in front
of the body so that information can move between fibers.

Every builder has two forms: ``add_*`` appends layers to an existing
:class:`~mfnet.graph.GraphBuilder` and returns the name of the output value;
``build_*`` returns a standalone :class:`~mfnet.graph.GraphSpec` fragment.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError
from .graph import GraphBuilder, GraphSpec

DEFAULT_REDUCTION = 3


def connections_dense(m_in: int, m_mid: int, m_out: int) -> int:
    """Channel pairings of a plain two-layer residual body."""
    for v in (m_in, m_mid, m_out):
        if int(v) != v or v < 1:
            raise ConfigurationError(f"channel counts must be positive integers, got {v}")
    return m_in * m_mid + m_mid * m_out


def connections_sliced(m_in: int, m_mid: int, m_out: int, fibers: int) -> int:
    """Channel pairings after slicing the body into ``fibers`` isolated paths."""
    if fibers < 1:
        raise ConfigurationError(f"fibers must be positive, got {fibers}")
    for name, v in (("M_in", m_in), ("M_mid", m_mid), ("M_out", m_out)):
        if v % fibers:
            raise ConfigurationError(f"{name}={v} is not divisible by N={fibers}")
    n = fibers
    return n * ((m_in // n) * (m_mid // n) + (m_mid // n) * (m_out // n))


@dataclass(frozen=True)
class MultiplexerConfig:
    """``channels`` C in and out; bottleneck width ``C // reduction``."""

    channels: int
    reduction: int = DEFAULT_REDUCTION
    ndim: int = 2

    def __post_init__(self):
        if self.ndim not in (2, 3):
            raise ConfigurationError(f"ndim must be 2 or 3, got {self.ndim}")
        if self.reduction < 2:
            raise ConfigurationError(f"multiplexer reduction k must be >= 2, got {self.reduction}")
        if self.channels // self.reduction < 1:
            raise ConfigurationError(
                f"multiplexer reduction k={self.reduction} leaves no channels out of "
                f"C={self.channels}")

    @property
    def width(self) -> int:
        return self.channels // self.reduction


@dataclass(frozen=True)
class FiberUnitConfig:
    fibers: int
    in_channels: int
    mid_channels: int
    out_channels: int
    stride: tuple[int, ...] | int = 1
    ndim: int = 2
    first_temporal_extent: int = 3
    multiplexer: bool = True
    reduction: int = DEFAULT_REDUCTION
    shortcut: str | None = None
    temporal_padding: str = "zeros"

    def __post_init__(self):
        if self.ndim not in (2, 3):
            raise ConfigurationError(f"ndim must be 2 or 3, got {self.ndim}")
        stride = (self.stride,) if isinstance(self.stride, int) else tuple(int(s) for s in self.stride)
        if len(stride) == 1:
            stride = stride * self.ndim
        if len(stride) != self.ndim:
            raise ConfigurationError(f"stride {self.stride} does not have {self.ndim} entries")
        object.__setattr__(self, "stride", stride)
        if self.fibers < 1:
            raise ConfigurationError(f"fibers must be positive, got {self.fibers}")
        for name, v in (("in_channels", self.in_channels), ("mid_channels", self.mid_channels),
                        ("out_channels", self.out_channels)):
            if v < 1 or v % self.fibers:
                raise ConfigurationError(f"{name}={v} is not divisible by N={self.fibers}")
        if self.first_temporal_extent not in (1, 3):
            raise ConfigurationError("first_temporal_extent must be 1 or 3")
        reshapes = self.in_channels != self.out_channels or any(s != 1 for s in stride)
        shortcut = self.shortcut or ("projection" if reshapes else "identity")
        if shortcut not in ("identity", "projection"):
            raise ConfigurationError(f"shortcut must be 'identity' or 'projection', got {shortcut!r}")
        if shortcut == "identity" and reshapes:
            raise ConfigurationError(
                "identity shortcut needs in_channels == out_channels and unit strides")
        object.__setattr__(self, "shortcut", shortcut)
        if self.multiplexer:
            MultiplexerConfig(self.in_channels, self.reduction, self.ndim)


def _unit_kernel(ndim: int, temporal: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if ndim == 2:
        return (3, 3), (1, 1)
    return (temporal, 3, 3), (temporal // 2, 1, 1)


def add_multiplexer(b: GraphBuilder, src: str, cfg: MultiplexerConfig, prefix: str) -> str:
    """BN-ReLU-1x1 (C -> C/k), BN-ReLU-1x1 (C/k -> C), added back onto ``src``."""
    if b.channels(src) != cfg.channels:
        raise ConfigurationError(
            f"{prefix}: multiplexer for {cfg.channels} channels fed {b.channels(src)}")
    one = (1,) * cfg.ndim
    h = b.bn(f"{prefix}.bn1", src)
    h = b.relu(f"{prefix}.relu1", h)
    h = b.conv(f"{prefix}.conv1", h, cfg.width, one)
    h = b.bn(f"{prefix}.bn2", h)
    h = b.relu(f"{prefix}.relu2", h)
    h = b.conv(f"{prefix}.conv2", h, cfg.channels, one)
    return b.add(f"{prefix}.add", src, h)


def add_mf_unit(b: GraphBuilder, src: str, cfg: FiberUnitConfig, prefix: str) -> str:
    """Append one multi-fiber unit; returns the name of its output."""
    if b.channels(src) != cfg.in_channels:
        raise ConfigurationError(
            f"{prefix}: unit expects {cfg.in_channels} input channels, got {b.channels(src)}")
    h = src
    if cfg.multiplexer:
        h = add_multiplexer(b, h, MultiplexerConfig(cfg.in_channels, cfg.reduction, cfg.ndim),
                            f"{prefix}.mux")
    k1, p1 = _unit_kernel(cfg.ndim, cfg.first_temporal_extent)
    k2, p2 = _unit_kernel(cfg.ndim, 1)
    mode = cfg.temporal_padding
    h = b.bn(f"{prefix}.bn1", h)
    h = b.relu(f"{prefix}.relu1", h)
    h = b.conv(f"{prefix}.conv1", h, cfg.mid_channels, k1, cfg.stride, p1, cfg.fibers,
               padding_mode=mode)
    h = b.bn(f"{prefix}.bn2", h)
    h = b.relu(f"{prefix}.relu2", h)
    h = b.conv(f"{prefix}.conv2", h, cfg.out_channels, k2, 1, p2, cfg.fibers, padding_mode=mode)
    if cfg.shortcut == "projection":
        s = b.bn(f"{prefix}.proj_bn", src)
        s = b.conv(f"{prefix}.proj", s, cfg.out_channels, (1,) * cfg.ndim, cfg.stride)
    else:
        s = src
    return b.add(f"{prefix}.add", s, h)


def _extent(ndim: int, spatial) -> tuple[int, ...]:
    spatial = tuple(spatial)
    if len(spatial) != ndim:
        raise ConfigurationError(f"spatial extent {spatial} does not have {ndim} axes")
    return spatial


def build_multiplexer(cfg: MultiplexerConfig, spatial=None, name: str = "multiplexer") -> GraphSpec:
    """Standalone multiplexer graph over a ``(C, *spatial)`` input."""
    spatial = _extent(cfg.ndim, spatial or (8,) * cfg.ndim)
    b = GraphBuilder((cfg.channels,) + spatial, name=name)
    return b.build(add_multiplexer(b, b.input_name, cfg, "mux"))


def build_mf_unit(cfg: FiberUnitConfig, spatial=None, name: str = "mf_unit") -> GraphSpec:
    """Standalone multi-fiber unit graph over a ``(M_in, *spatial)`` input."""
    spatial = _extent(cfg.ndim, spatial or (8,) * cfg.ndim)
    b = GraphBuilder((cfg.in_channels,) + spatial, name=name)
    return b.build(add_mf_unit(b, b.input_name, cfg, "unit"))

"""Full network builders: 2D/3D MF-Net and a ResNet-18 cost reference.

Default stage layout (per-sample output sizes for the 3D network):

=========  ======  ========  ==============  ===========
stage      units   channels  3D output       3D stride
=========  ======  ========  ==============  ===========
conv1      1       16        16x112x112      (1,2,2)
pool1                        16x56x56        (1,2,2)
conv2      3       96        8x56x56         (2,1,1)
conv3      4       192       8x28x28         (1,2,2)
conv4      6       384       8x14x14         (1,2,2)
conv5      3       768       8x7x7           (1,2,2)
head                         1x1x1 -> FC
=========  ======  ========  ==============  ===========

The 2D network drops the temporal axis and uses stride 1 in conv2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .blocks import DEFAULT_REDUCTION, FiberUnitConfig, add_mf_unit
from .errors import ConfigurationError
from .graph import GraphBuilder, GraphSpec

STAGE_CHANNELS = (96, 192, 384, 768)
STAGE_REPEATS = (3, 4, 6, 3)


@dataclass(frozen=True)
class NetConfig:
    dims: int = 2
    num_classes: int | None = None
    fibers: int = 16
    reduction: int = DEFAULT_REDUCTION
    multiplexer: bool = True
    width_scale: float = 1.0
    stage_channels: tuple[int, ...] = STAGE_CHANNELS
    stage_repeats: tuple[int, ...] = STAGE_REPEATS
    stem_channels: int = 16
    stem_kernel: int = 5
    stem_temporal_kernel: int = 3
    first_temporal_extent: int = 3
    in_channels: int = 3
    frames: int = 16
    size: int = 224
    # replicate temporal padding and unit temporal strides (inflation checks)
    temporal_test_mode: bool = False

    def __post_init__(self):
        if self.dims not in (2, 3):
            raise ConfigurationError(f"dims must be 2 or 3, got {self.dims}")
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "stage_repeats", tuple(int(r) for r in self.stage_repeats))
        if len(self.stage_channels) != len(self.stage_repeats) or not self.stage_channels:
            raise ConfigurationError("stage_channels and stage_repeats must have equal, "
                                     "non-zero length")
        if any(r < 0 for r in self.stage_repeats) or sum(self.stage_repeats) < 1:
            raise ConfigurationError("stage_repeats must be >= 0 with at least one unit")
        if self.fibers < 1:
            raise ConfigurationError(f"fibers must be positive, got {self.fibers}")
        if not self.width_scale > 0:
            raise ConfigurationError(f"width_scale must be positive, got {self.width_scale}")
        if self.stem_kernel < 1 or self.stem_kernel % 2 == 0:
            raise ConfigurationError("stem_kernel must be a positive odd integer")
        if self.stem_temporal_kernel < 1 or self.stem_temporal_kernel % 2 == 0:
            raise ConfigurationError("stem_temporal_kernel must be a positive odd integer")
        if self.num_classes is not None and self.num_classes < 1:
            raise ConfigurationError("num_classes must be positive")
        self.widths()

    @property
    def classes(self) -> int:
        if self.num_classes is not None:
            return self.num_classes
        return 1000 if self.dims == 2 else 400

    def widths(self) -> tuple[int, ...]:
        """Stage widths after ``width_scale``; each must divide into N fibers."""
        out = []
        for c in self.stage_channels:
            w = int(round(c * self.width_scale))
            if w < 1 or w % self.fibers:
                raise ConfigurationError(
                    f"stage width {w} (from {c} x {self.width_scale}) is not divisible by "
                    f"N={self.fibers} fibers")
            out.append(w)
        return tuple(out)

    def stem_width(self) -> int:
        """Scaled stem width rounded up to a multiple of N."""
        w = max(1, int(round(self.stem_channels * self.width_scale)))
        return math.ceil(w / self.fibers) * self.fibers

    def input_shape(self) -> tuple[int, ...]:
        if self.dims == 2:
            return (self.in_channels, self.size, self.size)
        return (self.in_channels, self.frames, self.size, self.size)

    def with_dims(self, dims: int, **changes) -> "NetConfig":
        return replace(self, dims=dims, **changes)


def toy_config(**changes) -> NetConfig:
    """Desk-scale 3D MF-Net: 1/8 width, N=4, one unit per stage, 8x32x32 clips."""
    base = dict(dims=3, num_classes=4, fibers=4, width_scale=1 / 8, stage_repeats=(1, 1, 1, 1),
                frames=8, size=32)
    base.update(changes)
    return NetConfig(**base)


def _build_mfnet(cfg: NetConfig, name: str) -> GraphSpec:
    nd = cfg.dims
    b = GraphBuilder(cfg.input_shape(), name=name)
    temporal_mode = "replicate" if cfg.temporal_test_mode and nd == 3 else "zeros"
    sk, skt = cfg.stem_kernel, cfg.stem_temporal_kernel
    if nd == 2:
        kernel, stride, pad = (sk, sk), (2, 2), (sk // 2, sk // 2)
        pwin, pstride, ppad = (3, 3), (2, 2), (1, 1)
    else:
        kernel, stride, pad = (skt, sk, sk), (1, 2, 2), (skt // 2, sk // 2, sk // 2)
        pwin, pstride, ppad = (1, 3, 3), (1, 2, 2), (0, 1, 1)
    h = b.conv("conv1", b.input_name, cfg.stem_width(), kernel, stride, pad,
               padding_mode=temporal_mode)
    h = b.bn("conv1.bn", h)
    h = b.relu("conv1.relu", h)
    h = b.pool("pool1", h, "max", pwin, pstride, ppad)
    for si, (width, repeats) in enumerate(zip(cfg.widths(), cfg.stage_repeats)):
        for u in range(repeats):
            if u > 0:
                stride = (1,) * nd
            elif si == 0:
                stride = (1, 1) if nd == 2 else ((1 if cfg.temporal_test_mode else 2), 1, 1)
            else:
                stride = (2, 2) if nd == 2 else (1, 2, 2)
            unit = FiberUnitConfig(
                fibers=cfg.fibers, in_channels=b.channels(h), mid_channels=width,
                out_channels=width, stride=stride, ndim=nd,
                first_temporal_extent=cfg.first_temporal_extent if nd == 3 else 1,
                multiplexer=cfg.multiplexer, reduction=cfg.reduction,
                temporal_padding=temporal_mode)
            h = add_mf_unit(b, h, unit, f"conv{si + 2}.u{u + 1}")
    h = b.bn("head.bn", h)
    h = b.relu("head.relu", h)
    h = b.global_avg_pool("head.pool", h)
    h = b.flatten("head.flatten", h)
    b.linear("fc", h, cfg.classes)
    return b.build("fc")


def build_mfnet_2d(cfg: NetConfig | None = None) -> GraphSpec:
    cfg = cfg or NetConfig(dims=2)
    if cfg.dims != 2:
        cfg = cfg.with_dims(2)
    return _build_mfnet(cfg, "mfnet2d")


def build_mfnet_3d(cfg: NetConfig | None = None) -> GraphSpec:
    cfg = cfg or NetConfig(dims=3)
    if cfg.dims != 3:
        cfg = cfg.with_dims(3)
    return _build_mfnet(cfg, "mfnet3d")


def build_mfnet(cfg: NetConfig) -> GraphSpec:
    return build_mfnet_2d(cfg) if cfg.dims == 2 else build_mfnet_3d(cfg)


def build_resnet18_reference(num_classes: int = 1000, size: int = 224) -> GraphSpec:
    """Post-activation basic-block ResNet-18 (7x7/64 stem, 64-128-256-512 x 2)."""
    b = GraphBuilder((3, size, size), name="resnet18")
    h = b.conv("conv1", b.input_name, 64, (7, 7), 2, 3)
    h = b.bn("conv1.bn", h)
    h = b.relu("conv1.relu", h)
    h = b.pool("pool1", h, "max", (3, 3), 2, 1)
    for si, width in enumerate((64, 128, 256, 512)):
        for u in range(2):
            stride = 2 if (u == 0 and si > 0) else 1
            p = f"layer{si + 1}.b{u + 1}"
            x = h
            h = b.conv(f"{p}.conv1", x, width, (3, 3), stride, 1)
            h = b.bn(f"{p}.bn1", h)
            h = b.relu(f"{p}.relu1", h)
            h = b.conv(f"{p}.conv2", h, width, (3, 3), 1, 1)
            h = b.bn(f"{p}.bn2", h)
            if stride != 1 or b.channels(x) != width:
                s = b.conv(f"{p}.proj", x, width, (1, 1), stride)
                s = b.bn(f"{p}.proj_bn", s)
            else:
                s = x
            h = b.add(f"{p}.add", s, h)
            h = b.relu(f"{p}.relu2", h)
    h = b.global_avg_pool("head.pool", h)
    h = b.flatten("head.flatten", h)
    b.linear("fc", h, num_classes)
    return b.build("fc")

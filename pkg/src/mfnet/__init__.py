"""Multi-fiber network construction kit: kernels, graph engine, builders, cost model."""

from __future__ import annotations

from .arch import NetConfig, build_mfnet, build_mfnet_2d, build_mfnet_3d, build_resnet18_reference, toy_config
from .blocks import (FiberUnitConfig, MultiplexerConfig, build_mf_unit, build_multiplexer,
                     connections_dense, connections_sliced)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import parse_arch_config
from .cost import CostReport, count_flops, count_params, render_report
from .graph import GraphBuilder, GraphSpec, LayerSpec, ParamStore, backward, forward, init_params
from .inflation import inflate_checkpoint, inflate_params
from .trainer import (OptimizerConfig, SyntheticMotionSpec, TrainHistory, evaluate_clips,
                      generate_motion_dataset, train)

__version__ = "0.1.0"

__all__ = [
    "NetConfig", "build_mfnet", "build_mfnet_2d", "build_mfnet_3d", "build_resnet18_reference",
    "toy_config", "FiberUnitConfig", "MultiplexerConfig", "build_mf_unit", "build_multiplexer",
    "connections_dense", "connections_sliced", "Checkpoint", "load_checkpoint", "save_checkpoint",
    "parse_arch_config", "CostReport", "count_flops", "count_params", "render_report",
    "GraphBuilder", "GraphSpec", "LayerSpec", "ParamStore", "backward", "forward", "init_params",
    "inflate_checkpoint", "inflate_params", "OptimizerConfig", "SyntheticMotionSpec",
    "TrainHistory", "evaluate_clips", "generate_motion_dataset", "train",
]

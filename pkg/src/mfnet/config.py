"""Hierarchical key-value configuration files (a strict YAML subset).

Architecture config, every key optional::

    dims: 3d                 # 2d | 3d
    num_classes: 400
    fibers: 16               # N
    width_scale: 1.0
    in_channels: 3
    frames: 16
    size: 224
    temporal_test_mode: false
    multiplexer:
      enabled: true
      reduction: 3           # k
    stem:
      channels: 16
      kernel: 5
      temporal_kernel: 3
    stages:
      channels: [96, 192, 384, 768]
      repeats: [3, 4, 6, 3]
    unit:
      first_temporal_extent: 3

Unknown keys are rejected.  Errors carry the line/column of the offending
node (1-based).

The toy-training config has sections ``model`` (the keys above),
``optimizer``, ``dataset`` and a top-level ``precision`` (single | double).
"""

from __future__ import annotations

import yaml

from .arch import NetConfig, toy_config
from .errors import ArchConfigError, ConfigurationError
from .trainer import OptimizerConfig, SyntheticMotionSpec


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _num(v):
    return (isinstance(v, (int, float)) and not isinstance(v, bool))


def _bool(v):
    return isinstance(v, bool)


def _int_list(v):
    return isinstance(v, list) and bool(v) and all(_int(a) for a in v)


def _dims(v):
    return v in ("2d", "3d", 2, 3)


def _precision(v):
    return v in ("single", "double")


def _opt_int_list(v):
    return v is None or (isinstance(v, list) and all(_int(a) for a in v))


ARCH_SCHEMA = {
    "dims": (_dims, "2d or 3d"),
    "num_classes": (_int, "an integer"),
    "fibers": (_int, "an integer"),
    "width_scale": (_num, "a number"),
    "in_channels": (_int, "an integer"),
    "frames": (_int, "an integer"),
    "size": (_int, "an integer"),
    "temporal_test_mode": (_bool, "true or false"),
    "multiplexer": {"enabled": (_bool, "true or false"), "reduction": (_int, "an integer")},
    "stem": {"channels": (_int, "an integer"), "kernel": (_int, "an integer"),
             "temporal_kernel": (_int, "an integer")},
    "stages": {"channels": (_int_list, "a list of integers"),
               "repeats": (_int_list, "a list of integers")},
    "unit": {"first_temporal_extent": (_int, "an integer")},
}

OPTIMIZER_SCHEMA = {
    "lr": (_num, "a number"), "momentum": (_num, "a number"),
    "weight_decay": (_num, "a number"), "milestones": (_opt_int_list, "a list of integers"),
    "factor": (_num, "a number"), "batch_size": (_int, "an integer"),
    "max_iterations": (_int, "an integer"), "seed": (_int, "an integer"),
}

DATASET_SCHEMA = {
    "num_classes": (_int, "an integer"), "frames": (_int, "an integer"),
    "size": (_int, "an integer"), "samples_per_class": (_int, "an integer"),
    "noise": (_num, "a number"), "seed": (_int, "an integer"),
    "bar_length": (_int, "an integer"), "bar_width": (_int, "an integer"),
    "channels": (_int, "an integer"), "val_fraction": (_num, "a number"),
}

TRAIN_SCHEMA = {
    "model": ARCH_SCHEMA,
    "optimizer": OPTIMIZER_SCHEMA,
    "dataset": DATASET_SCHEMA,
    "precision": (_precision, "single or double"),
    "init_seed": (_int, "an integer"),
}


def _mark(node):
    m = node.start_mark
    return m.line + 1, m.column + 1


def _check(node, schema, path: str) -> dict:
    """Validate a composed YAML node against ``schema``; return plain values."""
    if not isinstance(node, yaml.MappingNode):
        line, col = _mark(node)
        raise ArchConfigError("expected a mapping", line, col, path or None)
    out = {}
    for knode, vnode in node.value:
        key = knode.value
        full = f"{path}.{key}" if path else key
        line, col = _mark(knode)
        if key not in schema:
            raise ArchConfigError(f"unknown key (allowed: {', '.join(schema)})", line, col, full)
        if key in out:
            raise ArchConfigError("duplicate key", line, col, full)
        rule = schema[key]
        if isinstance(rule, dict):
            if isinstance(vnode, yaml.ScalarNode) and vnode.tag.endswith(":null"):
                out[key] = {}
                continue
            out[key] = _check(vnode, rule, full)
            continue
        value = yaml.safe_load(yaml.serialize(vnode))
        ok, expected = rule
        if not ok(value):
            vl, vc = _mark(vnode)
            raise ArchConfigError(f"invalid value {value!r}, expected {expected}", vl, vc, full)
        out[key] = value
    return out


def _compose(text: str):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as e:
        m = e.problem_mark
        raise ArchConfigError(f"parse error: {e.problem}", m.line + 1 if m else None,
                              m.column + 1 if m else None) from None
    return node


def _net_config(data: dict, base: NetConfig) -> NetConfig:
    kw = {}
    if "dims" in data:
        kw["dims"] = 2 if data["dims"] in ("2d", 2) else 3
    for key in ("num_classes", "fibers", "width_scale", "in_channels", "frames", "size",
                "temporal_test_mode"):
        if key in data:
            kw[key] = data[key]
    mux = data.get("multiplexer", {})
    if "enabled" in mux:
        kw["multiplexer"] = mux["enabled"]
    if "reduction" in mux:
        kw["reduction"] = mux["reduction"]
    stem = data.get("stem", {})
    for src, dst in (("channels", "stem_channels"), ("kernel", "stem_kernel"),
                     ("temporal_kernel", "stem_temporal_kernel")):
        if src in stem:
            kw[dst] = stem[src]
    stages = data.get("stages", {})
    if "channels" in stages:
        kw["stage_channels"] = tuple(stages["channels"])
    if "repeats" in stages:
        kw["stage_repeats"] = tuple(stages["repeats"])
    unit = data.get("unit", {})
    if "first_temporal_extent" in unit:
        kw["first_temporal_extent"] = unit["first_temporal_extent"]
    fields = {**vars(base), **kw}
    try:
        cfg = NetConfig(**fields)
    except ConfigurationError as e:
        key = "fibers" if "fibers" in str(e) else None
        raise ArchConfigError(str(e), key=key) from None
    if cfg.first_temporal_extent not in (1, 3):
        raise ArchConfigError("must be 1 or 3", key="unit.first_temporal_extent")
    if cfg.reduction < 2:
        raise ArchConfigError("multiplexer reduction must be >= 2", key="multiplexer.reduction")
    return cfg


def parse_arch_config(text: str, base: NetConfig | None = None) -> NetConfig:
    """Parse architecture config text; missing keys fall back to ``base`` (defaults)."""
    node = _compose(text)
    data = {} if node is None else _check(node, ARCH_SCHEMA, "")
    return _net_config(data, base or NetConfig())


def load_arch_config(path) -> NetConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_arch_config(fh.read())


def parse_train_config(text: str):
    """Return ``(NetConfig, OptimizerConfig, SyntheticMotionSpec, precision, init_seed)``."""
    node = _compose(text)
    data = {} if node is None else _check(node, TRAIN_SCHEMA, "")
    net = _net_config(data.get("model", {}), toy_config())
    opt_kw = dict(data.get("optimizer", {}))
    if opt_kw.get("milestones") is not None:
        opt_kw["milestones"] = tuple(opt_kw["milestones"])
    try:
        opt = OptimizerConfig(**{**vars(DEFAULT_TOY_OPTIMIZER), **opt_kw})
        ds_defaults = dict(vars(DEFAULT_TOY_DATASET), num_classes=net.classes,
                           frames=net.frames, size=net.size, channels=net.in_channels)
        ds = SyntheticMotionSpec(**{**ds_defaults, **data.get("dataset", {})})
    except ConfigurationError as e:
        raise ArchConfigError(str(e)) from None
    return net, opt, ds, data.get("precision", "double"), data.get("init_seed", 0)


DEFAULT_TOY_OPTIMIZER = OptimizerConfig(lr=0.05, batch_size=16, max_iterations=600, seed=0)
DEFAULT_TOY_DATASET = SyntheticMotionSpec()


def format_arch_config(cfg: NetConfig) -> str:
    """Render ``cfg`` as config text that :func:`parse_arch_config` reads back."""
    data = {
        "dims": f"{cfg.dims}d",
        "num_classes": cfg.classes,
        "fibers": cfg.fibers,
        "width_scale": cfg.width_scale,
        "in_channels": cfg.in_channels,
        "frames": cfg.frames,
        "size": cfg.size,
        "temporal_test_mode": cfg.temporal_test_mode,
        "multiplexer": {"enabled": cfg.multiplexer, "reduction": cfg.reduction},
        "stem": {"channels": cfg.stem_channels, "kernel": cfg.stem_kernel,
                 "temporal_kernel": cfg.stem_temporal_kernel},
        "stages": {"channels": list(cfg.stage_channels), "repeats": list(cfg.stage_repeats)},
        "unit": {"first_temporal_extent": cfg.first_temporal_extent},
    }
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)

from __future__ import annotations

import pytest

from mfnet.arch import NetConfig, build_mfnet, toy_config
from mfnet.config import format_arch_config, parse_arch_config, parse_train_config
from mfnet.errors import ArchConfigError


def test_empty_config_is_defaults():
    cfg = parse_arch_config("")
    assert cfg == NetConfig()
    assert cfg.fibers == 16 and cfg.reduction == 3
    assert cfg.stage_channels == (96, 192, 384, 768) and cfg.stage_repeats == (3, 4, 6, 3)


def test_fibers_12():
    cfg = parse_arch_config("fibers: 12")
    assert cfg.fibers == 12
    build_mfnet(cfg.with_dims(2))


def test_fibers_7_divisibility_error():
    with pytest.raises(ArchConfigError, match="not divisible by N=7") as e:
        parse_arch_config("fibers: 7")
    assert e.value.key == "fibers"


def test_nested_keys():
    text = """
dims: 3d
multiplexer:
  enabled: false
  reduction: 4
stages:
  repeats: [1, 1, 1, 1]
stem:
  kernel: 3
"""
    cfg = parse_arch_config(text)
    assert cfg.dims == 3 and not cfg.multiplexer and cfg.reduction == 4
    assert cfg.stage_repeats == (1, 1, 1, 1) and cfg.stem_kernel == 3


def test_unknown_key_with_position():
    with pytest.raises(ArchConfigError) as e:
        parse_arch_config("fibers: 16\nstem:\n  kernal: 3\n")
    err = e.value
    assert (err.line, err.column, err.key) == (3, 3, "stem.kernal")
    assert "line 3, column 3" in str(err)


def test_invalid_value_names_key():
    with pytest.raises(ArchConfigError, match="key 'fibers'.*expected an integer"):
        parse_arch_config("fibers: x")
    with pytest.raises(ArchConfigError, match="stages.channels"):
        parse_arch_config("stages:\n  channels: [96, a]\n")


def test_parse_error_position():
    with pytest.raises(ArchConfigError) as e:
        parse_arch_config("fibers: 16\n  - bad: [\n")
    assert e.value.line is not None and "parse error" in str(e.value)


def test_format_round_trip():
    for cfg in (NetConfig(), toy_config(), NetConfig(dims=2, fibers=12, multiplexer=False)):
        assert parse_arch_config(format_arch_config(cfg)) == cfg.with_dims(
            cfg.dims, num_classes=cfg.classes)


def test_train_config_defaults_and_overrides():
    net, opt, ds, precision, seed = parse_train_config("")
    assert net == toy_config() and precision == "double" and seed == 0
    assert ds.frames == net.frames and ds.num_classes == net.classes
    text = """
model:
  fibers: 2
optimizer:
  lr: 0.01
  milestones: [10, 20]
dataset:
  samples_per_class: 30
precision: single
init_seed: 7
"""
    net, opt, ds, precision, seed = parse_train_config(text)
    assert net.fibers == 2 and opt.lr == 0.01 and opt.schedule() == (10, 20)
    assert ds.samples_per_class == 30 and precision == "single" and seed == 7


def test_train_config_errors():
    with pytest.raises(ArchConfigError, match="precision"):
        parse_train_config("precision: half")
    with pytest.raises(ArchConfigError, match="lr must be positive"):
        parse_train_config("optimizer:\n  lr: 0\n")

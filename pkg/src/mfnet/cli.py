"""Command-line interface: ``mfnet <command> ...``.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cost
from .arch import NetConfig, build_mfnet, build_resnet18_reference
from .checkpoint import read_checkpoint, save_checkpoint, store_from_checkpoint, write_checkpoint
from .config import format_arch_config, load_arch_config, parse_arch_config, parse_train_config
from .errors import MFNetError
from .graph import init_params

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _arch(path: str | None, dims: str | None) -> NetConfig:
    cfg = load_arch_config(path) if path else NetConfig()
    if dims:
        cfg = cfg.with_dims(2 if dims == "2d" else 3)
    return cfg


def _shape(text: str | None):
    if not text:
        return None
    return tuple(int(a) for a in text.replace("x", ",").split(","))


def cmd_summarize(args) -> int:
    if args.model == "resnet18":
        graph = build_resnet18_reference()
    else:
        graph = build_mfnet(_arch(args.arch, args.dims))
    report = cost.count_flops(graph, _shape(args.input_shape))
    sys.stdout.write(cost.render_report(report, args.format, stages=args.stages))
    return EXIT_OK


def _named_graph(token: str):
    builtin = {"resnet18": build_resnet18_reference,
               "mfnet-2d": lambda: build_mfnet(NetConfig(dims=2)),
               "mfnet-3d": lambda: build_mfnet(NetConfig(dims=3))}
    if token in builtin:
        return token, builtin[token]()
    return Path(token).stem, build_mfnet(load_arch_config(token))


def cmd_compare(args) -> int:
    reports = []
    for token in args.archs:
        label, graph = _named_graph(token)
        reports.append((label, cost.count_flops(graph)))
    sys.stdout.write(cost.compare_table(reports))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(args.seed)
    failed = 0
    for r in results:
        ok = r.passed(args.tolerance)
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {r.name} {r.error:.3e}")
    print(f"{len(results) - failed}/{len(results)} checks within {args.tolerance:g}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_init(args) -> int:
    cfg = _arch(args.arch, args.dims)
    graph = build_mfnet(cfg)
    store = init_params(graph, args.seed)
    save_checkpoint(store, graph, args.out, {"arch_config": format_arch_config(cfg)})
    print(f"wrote {args.out} ({store.num_learnable()} learnable values)")
    return EXIT_OK


def cmd_inflate(args) -> int:
    from .inflation import inflate_checkpoint

    src = read_checkpoint(args.source)
    if args.arch:
        cfg = load_arch_config(args.arch)
    elif "arch_config" in src.metadata:
        cfg = parse_arch_config(src.metadata["arch_config"])
    else:
        cfg = NetConfig()
    # the classifier is copied verbatim, so both networks share the 2D class count
    cfg = cfg.with_dims(cfg.dims, num_classes=cfg.with_dims(2).classes)
    if args.test_mode:
        cfg = cfg.with_dims(cfg.dims, temporal_test_mode=True)
    graph2d = build_mfnet(cfg.with_dims(2))
    graph3d = build_mfnet(cfg.with_dims(3))
    if args.force:
        src.fingerprint = graph2d.fingerprint()
    out = inflate_checkpoint(src, graph2d, graph3d)
    out.metadata["arch_config"] = format_arch_config(cfg.with_dims(3))
    write_checkpoint(out, args.out)
    print(f"wrote {args.out} ({len(out.tensors)} tensors)")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .trainer import generate_motion_dataset, train

    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    net, opt, ds_spec, precision, init_seed = parse_train_config(text)
    dtype = np.float64 if precision == "double" else np.float32
    graph = build_mfnet(net)
    store = init_params(graph, init_seed, dtype)
    data = generate_motion_dataset(ds_spec, dtype)
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    hist = train(graph, store, data, opt, log)
    meta = {"arch_config": format_arch_config(net), "dataset": json.dumps(vars(ds_spec)),
            "precision": precision,
            "final_val_accuracy": repr(hist.final_val_accuracy)}
    if args.out:
        save_checkpoint(store, graph, args.out, meta)
    if args.history:
        Path(args.history).write_text(hist.to_csv(), encoding="utf-8")
    print(f"val accuracy {hist.final_val_accuracy:.4f} after {len(hist.losses)} iterations")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .trainer import SyntheticMotionSpec, evaluate_clips, generate_motion_dataset, shuffle_time

    ckpt = read_checkpoint(args.ckpt)
    if "arch_config" not in ckpt.metadata:
        raise MFNetError(f"{args.ckpt} carries no arch_config metadata")
    cfg = parse_arch_config(ckpt.metadata["arch_config"])
    graph = build_mfnet(cfg)
    store = store_from_checkpoint(ckpt, graph, force=args.force)
    dtype = np.float32 if ckpt.metadata.get("precision") == "single" else np.float64
    store = store.astype(dtype)
    ds_kw = json.loads(ckpt.metadata.get("dataset", "{}"))
    # held-out long videos: fresh seed, twice the clip length
    ds_kw.update(seed=args.seed + 10_000, frames=cfg.frames * args.length_factor,
                 samples_per_class=args.videos_per_class)
    data = generate_motion_dataset(SyntheticMotionSpec(**ds_kw), dtype)
    videos = np.concatenate([data.train_x, data.val_x])
    labels = np.concatenate([data.train_y, data.val_y])
    shuffled = shuffle_time(videos, args.seed)
    hits = hits_shuffled = 0
    for i, (video, label) in enumerate(zip(videos, labels)):
        hits += evaluate_clips(graph, store, video, args.clips, args.seed + i)[1] == label
        hits_shuffled += evaluate_clips(graph, store, shuffled[i], args.clips,
                                        args.seed + i)[1] == label
    n = len(labels)
    acc, acc_shuffled = hits / n, hits_shuffled / n
    print(f"videos {n} clips/video {args.clips}")
    print(f"accuracy {acc:.4f}")
    print(f"shuffled-control accuracy {acc_shuffled:.4f}")
    if args.min_accuracy is not None and acc < args.min_accuracy:
        return EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfnet", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1,
                        help="BLAS threads for numeric kernels (default 1, deterministic)")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help):
        return sub.add_parser(name, help=help, parents=[common])

    s = add("summarize", "per-layer params / multiply-adds report")
    s.add_argument("--arch", help="architecture config file (default: built-in MF-Net)")
    s.add_argument("--dims", choices=("2d", "3d"), default=None)
    s.add_argument("--model", choices=("mfnet", "resnet18"), default="mfnet")
    s.add_argument("--input-shape", help="batched input shape, e.g. 1,3,16,224,224")
    s.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    s.add_argument("--stages", action="store_true", help="markdown: per-stage subtotals only")
    s.set_defaults(func=cmd_summarize)

    s = add("compare", "side-by-side params / multiply-adds")
    s.add_argument("--archs", nargs="+", required=True,
                   help="config files or built-ins: resnet18, mfnet-2d, mfnet-3d")
    s.set_defaults(func=cmd_compare)

    s = add("gradcheck", "finite-difference suite over all layer kinds")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tolerance", type=float, default=1e-5)
    s.set_defaults(func=cmd_gradcheck)

    s = add("init", "write a randomly initialized checkpoint")
    s.add_argument("--arch")
    s.add_argument("--dims", choices=("2d", "3d"), default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init)

    s = add("inflate", "inflate a 2D checkpoint into a 3D one")
    s.add_argument("--from", dest="source", required=True)
    s.add_argument("--arch", help="architecture config shared by the 2D and 3D networks "
                   "(default: the source checkpoint's own config)")
    s.add_argument("--out", required=True)
    s.add_argument("--test-mode", action="store_true",
                   help="replicate temporal padding and unit temporal strides")
    s.add_argument("--force", action="store_true", help="ignore fingerprint mismatch")
    s.set_defaults(func=cmd_inflate)

    s = add("train-toy", "train the toy 3D MF-Net on synthetic motion clips")
    s.add_argument("--config", help="training config file (default: built-in toy settings)")
    s.add_argument("--out", help="checkpoint path")
    s.add_argument("--history", help="history CSV path")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train_toy)

    s = add("eval", "multi-clip accuracy with a temporally shuffled control")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--clips", type=int, default=5, help="clips sampled per video")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--videos-per-class", type=int, default=25)
    s.add_argument("--length-factor", type=int, default=2, help="video length / clip length")
    s.add_argument("--min-accuracy", type=float, default=None,
                   help="exit 1 when accuracy falls below this value")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return args.func(args)
    except MFNetError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

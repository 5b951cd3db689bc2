"""Toy-scale training harness.

The synthetic motion task renders a bar that translates one pixel per frame
on a torus (wrap-around) in one of up to eight directions.  Bar orientation
and start position are drawn independently of the class, so every single
frame has the same distribution for every class.  Only the temporal order of
frames tells the classes apart.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor_core as tc
from .errors import ConfigurationError, ContractError, TrainingDiverged
from .graph import GraphSpec, ParamStore, backward, forward

# (dy, dx) per class: up, down, left, right, then diagonals
DIRECTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


@dataclass(frozen=True)
class SyntheticMotionSpec:
    num_classes: int = 4
    frames: int = 8
    size: int = 32
    samples_per_class: int = 100
    noise: float = 0.1
    seed: int = 0
    bar_length: int = 8
    bar_width: int = 2
    channels: int = 3
    val_fraction: float = 0.2

    def __post_init__(self):
        if not 2 <= self.num_classes <= len(DIRECTIONS):
            raise ConfigurationError(f"num_classes must be in [2, {len(DIRECTIONS)}]")
        if self.frames < 2:
            raise ConfigurationError("motion needs at least 2 frames")
        if self.bar_width < 1 or self.bar_length <= self.bar_width:
            raise ConfigurationError("bar must be longer than it is wide")
        if self.bar_length >= self.size:
            raise ConfigurationError(
                f"frame size {self.size} too small for a bar of length {self.bar_length}")
        if self.noise < 0:
            raise ConfigurationError("noise must be non-negative")
        if not 0 < self.val_fraction < 1:
            raise ConfigurationError("val_fraction must lie in (0, 1)")
        if self.samples_per_class < 2:
            raise ConfigurationError("need at least 2 samples per class")


@dataclass
class MotionDataset:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    spec: SyntheticMotionSpec


def render_clip(direction: int, orientation: int, y0: int, x0: int, spec: SyntheticMotionSpec,
                frames: int | None = None) -> np.ndarray:
    """Noise-free ``(T, H, W)`` clip of one moving bar."""
    T = frames or spec.frames
    base = np.zeros((spec.size, spec.size))
    if orientation == 0:
        base[:spec.bar_width, :spec.bar_length] = 1.0
    else:
        base[:spec.bar_length, :spec.bar_width] = 1.0
    dy, dx = DIRECTIONS[direction]
    return np.stack([np.roll(base, (y0 + dy * t, x0 + dx * t), axis=(0, 1)) for t in range(T)])


def generate_motion_dataset(spec: SyntheticMotionSpec, dtype=np.float64) -> MotionDataset:
    """Clips shaped ``(N, channels, T, H, W)``; a stratified 20% goes to validation."""
    rng = np.random.default_rng(spec.seed)
    n_val = max(1, int(round(spec.samples_per_class * spec.val_fraction)))
    xs, ys, is_val = [], [], []
    for c in range(spec.num_classes):
        for i in range(spec.samples_per_class):
            orientation = int(rng.integers(2))
            y0, x0 = (int(v) for v in rng.integers(spec.size, size=2))
            clip = render_clip(c, orientation, y0, x0, spec)
            clip = np.repeat(clip[None], spec.channels, axis=0)
            if spec.noise > 0:
                clip = clip + rng.normal(0.0, spec.noise, size=clip.shape)
            xs.append(clip)
            ys.append(c)
            is_val.append(i >= spec.samples_per_class - n_val)
    x = np.asarray(xs, dtype=dtype)
    y = np.asarray(ys, dtype=np.int64)
    v = np.asarray(is_val)
    return MotionDataset(x[~v], y[~v], x[v], y[v], spec)


def shuffle_time(clips: np.ndarray, seed: int = 0) -> np.ndarray:
    """Independently permute the frame axis (axis 2) of every clip."""
    rng = np.random.default_rng(seed)
    out = np.empty_like(clips)
    for i in range(clips.shape[0]):
        out[i] = clips[i][:, rng.permutation(clips.shape[2])]
    return out


# --------------------------------------------------------------------------
# optimization


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 1e-4
    milestones: tuple[int, ...] | None = None
    factor: float = 0.1
    batch_size: int = 16
    max_iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if not 0 < self.factor < 1:
            raise ConfigurationError(f"decay factor must lie in (0, 1), got {self.factor}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be non-negative")
        if self.batch_size < 1 or self.max_iterations < 0:
            raise ConfigurationError("batch_size must be >= 1 and max_iterations >= 0")

    def schedule(self) -> tuple[int, ...]:
        if self.milestones is not None:
            return tuple(sorted(self.milestones))
        n = self.max_iterations
        return tuple(int(round(f * n)) for f in (0.5, 0.75, 0.9))

    def lr_at(self, iteration: int) -> float:
        drops = sum(1 for m in self.schedule() if iteration >= m)
        return self.lr * self.factor ** drops


class SGD:
    """Momentum SGD: ``v = mu * v + g``; ``w -= lr * (v + wd * w)``."""

    def __init__(self, momentum: float = 0.9, weight_decay: float = 1e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, store: ParamStore, lr: float):
        for name, w in store.params.items():
            g = store.grads[name]
            v = self.velocity.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            w -= lr * (v + self.weight_decay * w)


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    # (iteration, train accuracy, val accuracy) at every epoch end
    epochs: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def final_val_accuracy(self) -> float:
        return self.epochs[-1][2] if self.epochs else float("nan")

    def to_csv(self) -> str:
        by_iter = {it: (tr, va) for it, tr, va in self.epochs}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("iteration", "loss", "lr", "train_acc", "val_acc"))
        for i, (loss, lr) in enumerate(zip(self.losses, self.lrs)):
            tr, va = by_iter.get(i, ("", ""))
            w.writerow((i, repr(loss), repr(lr), repr(tr) if tr != "" else "",
                        repr(va) if va != "" else ""))
        return buf.getvalue()


def predict(graph: GraphSpec, params: ParamStore, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Infer-mode logits for ``x`` computed in fixed-size chunks."""
    outs = [forward(graph, params, x[i:i + batch_size], "infer")[0]
            for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(outs, axis=0)


def accuracy(graph: GraphSpec, params: ParamStore, x: np.ndarray, y: np.ndarray,
             batch_size: int = 64) -> float:
    if x.shape[0] == 0:
        return float("nan")
    return float((predict(graph, params, x, batch_size).argmax(axis=1) == y).mean())


def train(graph: GraphSpec, params: ParamStore, dataset: MotionDataset, opt: OptimizerConfig,
          log=None) -> TrainHistory:
    """Train ``params`` in place with momentum SGD and step-decayed learning rate.

    Mini-batches are drawn without replacement from a seeded permutation;
    the final partial batch of an epoch is dropped.  At every epoch end the
    running train accuracy and the infer-mode validation accuracy are logged.
    """
    x, y = dataset.train_x, dataset.train_y
    if tuple(x.shape[1:]) != graph.input_shape:
        raise ContractError(f"dataset clips {x.shape[1:]} do not match graph input "
                            f"{graph.input_shape}")
    n = x.shape[0]
    bs = min(opt.batch_size, n)
    rng = np.random.default_rng(opt.seed)
    sgd = SGD(opt.momentum, opt.weight_decay)
    hist = TrainHistory()
    order = rng.permutation(n)
    pos = 0
    correct = seen = 0
    for it in range(opt.max_iterations):
        idx = order[pos:pos + bs]
        logits, retained = forward(graph, params, x[idx], "train")
        loss, dlogits = tc.softmax_cross_entropy(logits, y[idx])
        if not math.isfinite(loss):
            raise TrainingDiverged(f"loss is {loss} at iteration {it} (lr {opt.lr_at(it)}); "
                                   "lower the learning rate")
        backward(graph, params, retained, dlogits)
        lr = opt.lr_at(it)
        sgd.step(params, lr)
        hist.losses.append(loss)
        hist.lrs.append(lr)
        correct += int((logits.argmax(axis=1) == y[idx]).sum())
        seen += len(idx)
        pos += bs
        last = it == opt.max_iterations - 1
        if pos + bs > n or last:
            val = accuracy(graph, params, dataset.val_x, dataset.val_y)
            hist.epochs.append((it, correct / seen, val))
            if log is not None:
                log(f"iter {it + 1}: loss {loss:.4f} lr {lr:g} train_acc {correct / seen:.3f} "
                    f"val_acc {val:.3f}")
            order = rng.permutation(n)
            pos = 0
            correct = seen = 0
    return hist


def evaluate_clips(graph: GraphSpec, params: ParamStore, video: np.ndarray,
                   num_samples: int | None, seed: int = 0):
    """Average softmax over clips sampled from a long ``(C, T, H, W)`` video.

    ``num_samples`` start offsets are drawn uniformly (with replacement) from
    the valid range; ``None`` uses every offset once.  Returns
    ``(mean_distribution, argmax)``.
    """
    clip_t = graph.input_shape[1]
    if video.ndim != len(graph.input_shape) or video.shape[0] != graph.input_shape[0] or \
            tuple(video.shape[2:]) != graph.input_shape[2:]:
        raise ContractError(f"video shape {video.shape} incompatible with clip shape "
                            f"{graph.input_shape}")
    T = video.shape[1]
    if T < clip_t:
        raise ContractError(f"video has {T} frames, shorter than the {clip_t}-frame clip")
    if num_samples is None:
        offsets = np.arange(T - clip_t + 1)
    else:
        if num_samples < 1:
            raise ContractError("num_samples must be positive")
        offsets = np.random.default_rng(seed).integers(0, T - clip_t + 1, size=num_samples)
    clips = np.stack([video[:, o:o + clip_t] for o in offsets])
    probs = tc.softmax(predict(graph, params, clips))
    dist = probs.mean(axis=0)
    return dist, int(dist.argmax())

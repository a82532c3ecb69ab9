"""Optimization: data split, Adam, plateau decay and the epoch loop."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import losses, ops
from .errors import NumericError, ShapeError
from .tensor import GradTape, Tensor, no_grad


# ---------------------------------------------------------------- split


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.93
    test: float = 0.04
    dev: float = 0.03
    seed: int = 0

    def validate(self) -> None:
        parts = (self.train, self.test, self.dev)
        if min(parts) < 0 or not math.isclose(sum(parts), 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {parts}")


def split_sizes(n: int, spec: SplitSpec = SplitSpec()) -> tuple[int, int, int]:
    """Largest-remainder rounding of n into (train, test, dev)."""
    spec.validate()
    quotas = [n * f for f in (spec.train, spec.test, spec.dev)]
    # round the quotas first so 0.93 * 100 lands on 93 rather than 92.999...
    quotas = [round(q, 9) for q in quotas]
    sizes = [int(math.floor(q)) for q in quotas]
    order = sorted(range(3), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return tuple(sizes)


def split_indices(n: int, spec: SplitSpec = SplitSpec()):
    if n <= 0:
        raise ValueError("cannot split an empty dataset")
    n_train, n_test, _ = split_sizes(n, spec)
    perm = np.random.default_rng(spec.seed).permutation(n)
    return perm[:n_train], perm[n_train : n_train + n_test], perm[n_train + n_test :]


def split_dataset(observations: Sequence, spec: SplitSpec = SplitSpec()):
    """Seeded shuffle, then a contiguous 93/4/3 cut. Returns (train, test, dev)."""
    train, test, dev = split_indices(len(observations), spec)
    return tuple([observations[int(i)] for i in part] for part in (train, test, dev))


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def create(cls, params: Sequence[Tensor], lr: float = 0.01, **kw) -> "AdamState":
        if lr < 0:
            raise ValueError("learning rate must be >= 0")
        return cls(lr=lr, m=[np.zeros_like(p.data) for p in params], v=[np.zeros_like(p.data) for p in params], **kw)


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place. Missing grads count as zero.

    A non-finite gradient rejects the whole step before anything changes.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state disagree in length", (len(params),), (len(grads),), (len(state.m),))
    grads = [np.zeros_like(p.data) if g is None else np.asarray(g) for p, g in zip(params, grads)]
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {p.name or 'parameter'} has the wrong shape", g.shape, p.shape)
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {p.name or 'parameter'}; step rejected")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.data.dtype)
    return state


# ---------------------------------------------------------------- schedule


@dataclass
class PlateauSchedule:
    """Halve the rate after ``patience`` epochs without a ``min_delta`` improvement."""

    lr: float = 0.01
    factor: float = 0.5
    patience: int = 3
    min_delta: float = 1e-3
    floor: float = 1e-5
    best: float = math.inf
    stale: int = 0

    def step(self, monitored_loss: float) -> float:
        if monitored_loss < self.best - self.min_delta:
            self.best = monitored_loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                # never raise the rate, even when it already sits below the floor
                self.lr = max(self.lr * self.factor, min(self.floor, self.lr))
                self.stale = 0
        return self.lr


def plateau_decay(schedule: PlateauSchedule, epoch_dev_loss: float) -> float:
    return schedule.step(epoch_dev_loss)


# ---------------------------------------------------------------- loop


def to_input(images: np.ndarray) -> Tensor:
    """uint8 NHWC images -> float tensor scaled to [-1, 1]."""
    x = np.asarray(images, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    return Tensor(x / np.float32(127.5) - np.float32(1.0))


def stack_batch(samples: Sequence):
    images = np.stack([np.asarray(s.image) for s in samples])
    labels = np.stack([np.asarray(s.dense_labels) for s in samples]).astype(np.int64)
    return images, labels


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.01
    loss: str = "nll"
    focal_gamma: float = 2.0
    class_weights: Optional[Sequence[float]] = None
    seed: int = 0
    factor: float = 0.5
    patience: int = 3
    min_delta: float = 1e-3
    lr_floor: float = 1e-5
    # which loss drives the plateau schedule: "dev" (train loss if no dev data) or "train"
    monitor: str = "dev"
    # share of the train partition withheld once and scored in place of the dev data
    holdout: float = 0.0

    def validate(self) -> None:
        if not 0.0 <= self.holdout < 1.0:
            raise ValueError(f"holdout must be in [0, 1), got {self.holdout}")
        if self.monitor not in ("dev", "train"):
            raise ValueError(f"monitor must be 'dev' or 'train', got {self.monitor!r}")
        if self.loss not in ("nll", "focal"):
            raise ValueError(f"loss must be 'nll' or 'focal', got {self.loss!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("need epochs >= 0 and batch_size >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)  # (epoch, train_loss, dev_loss or None, lr)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "dev_loss", "lr"])
            for epoch, train_loss, dev_loss, lr in self.rows:
                writer.writerow([epoch, f"{train_loss:.9g}", "" if dev_loss is None else f"{dev_loss:.9g}", f"{lr:.9g}"])

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                dev = rec["dev_loss"]
                rows.append((int(rec["epoch"]), float(rec["train_loss"]), float(dev) if dev else None, float(rec["lr"])))
        return cls(rows)


def _loss(probs: Tensor, labels: np.ndarray, config: TrainConfig) -> Tensor:
    if config.loss == "focal":
        return losses.focal_dense_loss(probs, labels, config.focal_gamma, config.class_weights)
    return losses.dense_nll_loss(probs, labels)


def infer_logits(net, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Inference-mode logits for a stack of uint8 images, batched."""
    net.eval()
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            out.append(net.forward(to_input(images[start : start + batch_size])).data)
    return np.concatenate(out)


def dataset_loss(net, samples: Sequence, config: TrainConfig) -> Optional[float]:
    """Pixel-weighted mean loss in inference mode; None for an empty set."""
    if not samples:
        return None
    net.eval()
    total, pixels = 0.0, 0
    with no_grad():
        for start in range(0, len(samples), config.batch_size):
            images, labels = stack_batch(samples[start : start + config.batch_size])
            probs = ops.softmax_per_fiber(net.forward(to_input(images)))
            total += float(_loss(probs, labels, config).data) * labels.size
            pixels += labels.size
    return total / pixels


def train_step(net, params, state: AdamState, images, labels, config: TrainConfig) -> float:
    for p in params:
        p.grad = None
    net.train()
    with GradTape() as tape:
        logits = net.forward(to_input(images))
        loss = _loss(ops.softmax_per_fiber(logits), labels, config)
    tape.backward(loss)
    adam_step(params, [p.grad for p in params], state)
    return float(loss.data)


def train_loop(
    net,
    train: Sequence,
    dev: Sequence = (),
    config: TrainConfig = TrainConfig(),
    on_epoch: Optional[Callable] = None,
):
    """Train in place. Returns (net, history).

    Each epoch reshuffles the training partition, runs one Adam step per
    batch, then scores the dev partition; the dev loss (train loss when there
    is no dev data, or when ``config.monitor == "train"``) drives the plateau
    schedule. With ``config.holdout > 0`` a random share of ``train`` (at
    least one sample) is set aside before the first epoch and its loss fills
    the dev column instead. ``on_epoch(row)`` sees every history row; returning True ends
    training after that epoch.
    """
    config.validate()
    if not train:
        raise ValueError("empty training set")
    num_classes = net.num_classes
    for s in train:
        if int(np.asarray(s.dense_labels).max(initial=0)) >= num_classes:
            raise ValueError(f"training labels exceed the network's {num_classes} classes")
    params = net.parameters()
    state = AdamState.create(params, lr=config.lr)
    schedule = PlateauSchedule(config.lr, config.factor, config.patience, config.min_delta, config.lr_floor)
    rng = np.random.default_rng(config.seed)
    train = list(train)
    if config.holdout > 0:
        n_hold = max(1, round(config.holdout * len(train)))
        if n_hold >= len(train):
            raise ValueError(f"holdout of {config.holdout} leaves no training samples out of {len(train)}")
        picked = set(rng.choice(len(train), size=n_hold, replace=False).tolist())
        dev = [s for i, s in enumerate(train) if i in picked]
        train = [s for i, s in enumerate(train) if i not in picked]
    history = TrainHistory()
    for epoch in range(1, config.epochs + 1):
        state.lr = schedule.lr
        order = rng.permutation(len(train))
        total, pixels = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            images, labels = stack_batch([train[int(i)] for i in order[start : start + config.batch_size]])
            try:
                loss = train_step(net, params, state, images, labels, config)
            except NumericError as err:
                raise NumericError(f"epoch {epoch}, batch {b}: {err}") from err
            if not math.isfinite(loss):
                raise NumericError(f"epoch {epoch}, batch {b}: non-finite loss {loss}")
            total += loss * labels.size
            pixels += labels.size
        train_loss = total / pixels
        dev_loss = dataset_loss(net, list(dev), config)
        lr_used = state.lr
        schedule.step(train_loss if dev_loss is None or config.monitor == "train" else dev_loss)
        row = (epoch, train_loss, dev_loss, lr_used)
        history.rows.append(row)
        if on_epoch is not None and on_epoch(row):
            break
    net.eval()
    return net, history

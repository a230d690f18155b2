"""SGD with momentum and step decay, plus top-1 evaluation."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..blocks import Network, sample_segments
from ..tensor_core import NonFiniteError, softmax_cross_entropy
from .synthetic import SyntheticDataset

log = logging.getLogger(__name__)


class NonFiniteLossError(NonFiniteError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    decay: float = 0.1
    milestones: tuple[int, ...] = (15, 25)
    epochs: int = 30
    dropout: float = 0.3
    segments: int = 8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(self.milestones))
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("milestones must be strictly increasing")
        if self.batch_size < 1 or self.epochs < 0 or self.segments < 1:
            raise ValueError("batch_size and segments must be >= 1, epochs >= 0")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay ** sum(epoch >= m for m in self.milestones)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    eval_acc: list[float | None] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def rows(self, timing: bool = False) -> list[dict]:
        out = []
        for i in range(len(self)):
            row = {"epoch": i + 1, "train_loss": self.train_loss[i], "train_acc": self.train_acc[i],
                   "eval_acc": self.eval_acc[i]}
            if timing:
                row["seconds"] = self.seconds[i]
            out.append(row)
        return out


def gather_frames(clips: np.ndarray, num_segments: int, mode: str, rng=None) -> np.ndarray:
    """Sample `num_segments` frames from every clip of a (B, C, T, H, W) stack."""
    total = clips.shape[2]
    idx = np.array([sample_segments(total, num_segments, mode, rng) for _ in range(len(clips))])
    return np.take_along_axis(clips, idx[:, None, :, None, None], axis=2)


def sgd_step(params, velocity: dict, lr: float, momentum: float, weight_decay: float = 0.0):
    """v <- momentum * v + g (+ wd * p);  p <- p - lr * v."""
    for name, p, g in params:
        d = g + weight_decay * p if weight_decay else g
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        v *= momentum
        v += d
        p -= lr * v


def predict(net: Network, dataset: SyntheticDataset, segments: int = 8, batch_size: int = 32) -> np.ndarray:
    """Eval-mode logits with middle-of-segment frames."""
    out = []
    for i in range(0, len(dataset), batch_size):
        batch = gather_frames(dataset.clips[i : i + batch_size], segments, "eval")
        logits, _ = net.forward(batch, "eval")
        out.append(logits)
    return np.concatenate(out)


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray, class_names=None):
    """Top-1 accuracy and per-class accuracy (classes without samples are omitted)."""
    labels = np.asarray(labels)
    pred = np.argmax(logits, axis=1)
    correct = pred == labels
    names = class_names or [str(i) for i in range(logits.shape[1])]
    per_class = {names[c]: float(correct[labels == c].mean()) for c in range(logits.shape[1]) if np.any(labels == c)}
    return float(correct.mean()), per_class


def evaluate(net: Network, dataset: SyntheticDataset, segments: int = 8):
    """Returns (accuracy, {class name: accuracy})."""
    return accuracy_from_logits(predict(net, dataset, segments), dataset.labels, list(dataset.class_names))


def train(net: Network, dataset: SyntheticDataset, cfg: TrainConfig,
          eval_dataset: SyntheticDataset | None = None) -> tuple[Network, TrainHistory]:
    """Train in place; deterministic for a fixed config seed on one thread."""
    rng = np.random.default_rng(cfg.seed)
    net.head.dropout = cfg.dropout
    velocity: dict[str, np.ndarray] = {}
    hist = TrainHistory()
    n = len(dataset)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        loss_sum, hits = 0.0, 0
        for i in range(0, n, cfg.batch_size):
            sel = order[i : i + cfg.batch_size]
            batch = gather_frames(dataset.clips[sel], cfg.segments, "train", rng)
            labels = dataset.labels[sel]
            logits, _ = net.forward(batch, "train", rng)
            loss, grad = softmax_cross_entropy(logits, labels)
            if not math.isfinite(loss):
                raise NonFiniteLossError(f"non-finite loss {loss} at epoch {epoch + 1}, batch starting {i}")
            net.zero_grad()
            net.backward(grad)
            sgd_step(net.parameters(), velocity, lr, cfg.momentum, cfg.weight_decay)
            loss_sum += loss * len(sel)
            hits += int(np.sum(np.argmax(logits, axis=1) == labels))
        hist.train_loss.append(loss_sum / n)
        hist.train_acc.append(hits / n)
        hist.eval_acc.append(evaluate(net, eval_dataset, cfg.segments)[0] if eval_dataset is not None else None)
        hist.seconds.append(time.perf_counter() - t0)
        log.info("epoch %d lr %.4g loss %.4f train %.3f eval %s", epoch + 1, lr,
                 hist.train_loss[-1], hist.train_acc[-1], hist.eval_acc[-1])
    return net, hist

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from gpplane.micronet.losses import compute_loss
from gpplane.micronet.net import MicroNet
from gpplane.micronet.optim import AdamState, adam_step


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.x)


@dataclass
class Schedule:
    """Piecewise-constant learning rate: ``lr_segments`` holds (first_epoch, lr)."""

    epochs: int = 120
    lr_segments: list[tuple[int, float]] = field(default_factory=lambda: [(0, 1e-3), (80, 5e-4)])
    batch: int = 32
    seed: int = 0
    decay: float = 1e-4

    def lr_at(self, epoch: int) -> float:
        lr = self.lr_segments[0][1]
        for start, value in self.lr_segments:
            if epoch >= start:
                lr = value
        return lr


def sv_schedule(classifier: bool = False, seed: int = 0) -> Schedule:
    """120 epochs: lr 1e-3 for 80, then 5e-4 (1e-4 for the classifier); decay 1e-4."""
    return Schedule(120, [(0, 1e-3), (80, 1e-4 if classifier else 5e-4)], 32, seed, 1e-4)


@dataclass
class TrainResult:
    net: MicroNet
    history: list[float]


def train(
    net: MicroNet,
    dataset: Dataset,
    schedule: Schedule,
    loss: str = "bce",
    augment=None,
    loss_kwargs: dict | None = None,
) -> TrainResult:
    """Mini-batch Adam on ``net`` in place. Deterministic given ``schedule.seed``.

    ``augment(xb, rng)`` may return a transformed batch; it draws from the
    same seeded generator as the shuffle.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(schedule.seed)
    state = AdamState.for_params(net.params, decoupled_decay=schedule.decay, decay_mask=net.weight_mask())
    loss_kwargs = loss_kwargs or {}
    history = []
    n = len(dataset)
    for epoch in range(schedule.epochs):
        lr = schedule.lr_at(epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, schedule.batch):
            idx = order[start : start + schedule.batch]
            xb = dataset.x[idx]
            if augment is not None:
                xb = augment(xb, rng)
            mb = None if dataset.mask is None else dataset.mask[idx]
            out, cache = net.forward(xb)
            value, grad = compute_loss(loss, out, dataset.y[idx], mb, **loss_kwargs)
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch}, batch starting {start}")
            grads = net.backward(cache, grad)
            adam_step(net.params, grads, state, lr)
            net.touch()
            total += value * len(idx)
        history.append(total / n)
    return TrainResult(net, history)


def accuracy(net: MicroNet, dataset: Dataset, threshold: float = 0.5) -> float:
    pred = net.predict(dataset.x) >= threshold
    return float(np.mean(pred == (dataset.y >= 0.5)))

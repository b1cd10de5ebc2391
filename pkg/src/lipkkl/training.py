"""Minibatch SGD for Lipschitz-bounded inverse-immersion networks."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DivergenceError
from .lipnet import LipNetParams, forward, init_params, loss_and_grad
from .numcore import make_rng
from .observer import PairedDataset


class EmptyPartitionError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 300
    batch_size: int = 64
    split_fraction: float = 0.8
    seed: int = 0
    gamma: float = 10.0
    hidden: tuple[int, ...] = (8, 8)
    momentum: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        self.hidden = tuple(int(w) for w in self.hidden)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: float = float("nan")
    wall_time: float = 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("epoch,train_loss\n")
            for i, v in enumerate(self.train_loss, start=1):
                fh.write(f"{i},{v!r}\n")


def _stream(seed: int, purpose: int) -> np.random.Generator:
    return make_rng([int(seed), purpose])


def split(ds: PairedDataset, fraction: float, rng: np.random.Generator) -> tuple[PairedDataset, PairedDataset]:
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    m = len(ds)
    n_train = int(round(fraction * m))
    if n_train == 0 or n_train == m:
        raise EmptyPartitionError(f"splitting {m} records at {fraction:g} leaves a side empty")
    perm = rng.permutation(m)
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


def split_for(ds: PairedDataset, cfg: TrainConfig) -> tuple[PairedDataset, PairedDataset]:
    """The train/validation split ``train`` uses for this config."""
    return split(ds, cfg.split_fraction, _stream(cfg.seed, 1))


def initial_params(ds: PairedDataset, cfg: TrainConfig) -> LipNetParams:
    """The starting point ``train`` uses for this dataset and config."""
    widths = (ds.z.shape[1], *cfg.hidden, ds.x.shape[1])
    return init_params(widths, len(cfg.hidden), cfg.gamma, _stream(cfg.seed, 2))


def mse(net: LipNetParams, ds: PairedDataset) -> float:
    if len(ds) == 0:
        raise ValueError("empty dataset")
    err = forward(net, ds.z) - ds.x
    return float(np.mean(np.sum(err * err, axis=1)))


def train(ds: PairedDataset, cfg: TrainConfig) -> tuple[LipNetParams, TrainHistory]:
    """Plain (optionally momentum) SGD over shuffled minibatches.

    Returns the final-epoch parameters; validation loss is reported only.
    """
    start = time.perf_counter()
    train_ds, val_ds = split_for(ds, cfg)
    net = initial_params(ds, cfg)
    shuffle = _stream(cfg.seed, 3)

    theta = net.to_vector()
    velocity = np.zeros_like(theta)
    hist = TrainHistory()
    m = len(train_ds)
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(m)
        for lo in range(0, m, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grad = loss_and_grad(net, train_ds.z[idx], train_ds.x[idx])
            except ValueError as exc:  # non-finite or singular Cayley input
                raise DivergenceError(f"epoch {epoch + 1}: {exc}") from exc
            if not np.isfinite(loss):
                raise DivergenceError(f"minibatch loss became non-finite in epoch {epoch + 1}")
            velocity = cfg.momentum * velocity - cfg.learning_rate * grad.to_vector()
            theta = theta + velocity
            if not np.all(np.isfinite(theta)):
                raise DivergenceError(
                    f"parameters became non-finite in epoch {epoch + 1}; "
                    f"learning rate {cfg.learning_rate:g} may be too high for gamma={cfg.gamma:g}"
                )
            net = net.with_vector(theta)
        loss = mse(net, train_ds)
        if not np.isfinite(loss):
            raise DivergenceError(f"training loss became non-finite in epoch {epoch + 1}")
        hist.train_loss.append(loss)
    hist.val_loss = mse(net, val_ds)
    hist.wall_time = time.perf_counter() - start
    return net, hist

"""SGD with momentum, weight decay and a geometric learning-rate schedule.

The schedule interpolates geometrically from lr_start to lr_end over the
epoch budget, so the rate spans its two endpoints smoothly regardless of the
number of epochs. Weight decay is applied to convolution weights and biases
but not to batch-norm gain/bias parameters.
"""

import csv
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from .errors import NumericalError, UsageError
from .losses import LossConfig


@dataclass
class TrainConfig:
    lr_start: float = 0.01
    lr_end: float = 0.0001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 10
    batch_size: int = 250
    seed: int = 0
    init_from: Optional[str] = None
    init_epochs: Optional[int] = None

    def __post_init__(self):
        if not (0 < self.lr_end <= self.lr_start):
            raise UsageError("require 0 < lr_end <= lr_start")
        if not (0 <= self.momentum < 1):
            raise UsageError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise UsageError("weight decay must be nonnegative")


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Geometric interpolation: lr(0) = lr_start, lr(epochs-1) = lr_end."""
    if not 0 <= epoch < max(cfg.epochs, 1):
        raise UsageError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.epochs <= 1:
        return cfg.lr_start
    frac = epoch / (cfg.epochs - 1)
    return float(cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac)


def _decays(name: str) -> bool:
    return not (name.endswith(".gain") or name.endswith(".bias"))


class SGD:
    """Classical momentum: v <- mu*v - lr*(grad + wd*param); param <- param + v."""

    def __init__(self, params: Dict[str, np.ndarray], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def reset_velocity(self) -> None:
        for v in self.velocity.values():
            v[...] = 0.0

    def step(self, grads: Dict[str, np.ndarray], lr: float) -> None:
        for name, p in self.params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in {name}")
            if self.cfg.weight_decay and _decays(name):
                g = g + self.cfg.weight_decay * p
            v = self.velocity[name]
            v *= self.cfg.momentum
            v -= lr * np.asarray(g, dtype=p.dtype)
            p += v


@dataclass
class EpochTrace:
    epoch: int
    mean_loss: float
    mu_plus: float
    mu_minus: float
    var_plus: float
    var_minus: float


def train(network, batches: Callable[[int, int], list], loss_name: str,
          loss_cfg: LossConfig, cfg: TrainConfig,
          on_epoch: Optional[Callable] = None) -> List[EpochTrace]:
    """Generic training loop.

    ``batches(epoch, seed)`` must return the minibatches for one epoch, each a
    tuple of arrays accepted by ``network.training_step``. Deterministic given
    the config seed. Returns a per-epoch trace of mean loss and the batch
    statistics of the last batch-producing loss.
    """
    optimizer = SGD(network.parameters(), cfg)
    trace: List[EpochTrace] = []
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        epoch_batches = batches(epoch, cfg.seed)
        if not epoch_batches:
            raise UsageError("dataset produced no minibatches")
        total = 0.0
        stats = None
        for batch in epoch_batches:
            res, grads = network.training_step(*batch, loss_name, loss_cfg)
            if not np.isfinite(res.value):
                raise NumericalError(f"non-finite loss {res.value} at epoch {epoch}")
            optimizer.step(grads, lr)
            total += res.value
            if res.stats is not None:
                stats = res.stats
        row = EpochTrace(
            epoch=epoch, mean_loss=total / len(epoch_batches),
            mu_plus=stats.mu_plus if stats else float("nan"),
            mu_minus=stats.mu_minus if stats else float("nan"),
            var_plus=stats.var_plus if stats else float("nan"),
            var_minus=stats.var_minus if stats else float("nan"),
        )
        trace.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return trace


def write_trace_csv(trace: List[EpochTrace], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "mu_plus", "mu_minus",
                         "var_plus", "var_minus"])
        for row in trace:
            writer.writerow([row.epoch, repr(row.mean_loss), repr(row.mu_plus),
                             repr(row.mu_minus), repr(row.var_plus), repr(row.var_minus)])

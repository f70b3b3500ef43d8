"""Adam training for the base network and end-to-end fine-tuning."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .. import ops
from ..io import load_checkpoint, save_checkpoint
from ..tensor import Tape, Tensor, backward
from .config import NetworkConfig
from .data import PairedDataset
from .metrics import batch_psnr
from .network import Network

logger = logging.getLogger(__name__)


class TrainingDivergedError(ArithmeticError):
    def __init__(self, epoch: int, step: int | None = None):
        where = f"epoch {epoch}" + (f", step {step}" if step is not None else "")
        super().__init__(f"loss became non-finite at {where}")
        self.epoch = epoch
        self.step = step


class Adam:
    """Adam with fixed learning rate over a name -> tensor mapping."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(v.shape) for k, v in params.items()}
        self.v = {k: np.zeros(v.shape) for k, v in params.items()}

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[p]
            m = self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    network: Network
    val_psnr: float
    epoch_losses: list[float] = field(default_factory=list)


def _run(network: Network, dataset: PairedDataset, epochs: int, lr: float, seed: int,
         batch_size: int, val_fraction: float) -> TrainResult:
    net = network.copy()
    train, val = dataset.split(val_fraction)
    rng = np.random.default_rng(seed)
    opt = Adam(net.params, lr=lr)
    losses = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for step, start in enumerate(range(0, len(order), batch_size)):
            idx = order[start:start + batch_size]
            x, y = Tensor(train.blurred[idx]), Tensor(train.sharp[idx])
            with Tape() as tape:
                loss = ops.mse_loss(net(x), y)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, step)
            opt.step(backward(tape, loss))
            total += value * len(idx)
        losses.append(total / len(train))
        logger.debug("epoch %d loss %.6g", epoch, losses[-1])
    return TrainResult(net, validation_psnr(net, val), losses)


def validation_psnr(network: Network, val: PairedDataset) -> float:
    return batch_psnr(network.predict(val.blurred), val.sharp)


def train_base(network: Network, dataset: PairedDataset, epochs: int = 80, lr: float = 2e-3, seed: int = 0,
               batch_size: int = 8, val_fraction: float = 0.25) -> TrainResult:
    """Train a copy of ``network`` on the training split; report validation PSNR."""
    return _run(network, dataset, epochs, lr, seed, batch_size, val_fraction)


def finetune(network: Network, dataset: PairedDataset, epochs: int = 10, lr: float = 5e-4, seed: int = 1,
             batch_size: int = 8, val_fraction: float = 0.25) -> TrainResult:
    """End-to-end training of a stitched network with every slot trainable."""
    return _run(network, dataset, epochs, lr, seed, batch_size, val_fraction)


def save_network(directory: Path, network: Network, meta: dict | None = None) -> None:
    save_checkpoint(directory, {k: t.data for k, t in network.params.items()},
                    {"config": network.config.to_dict(), **(meta or {})})


def load_network(directory: Path) -> tuple[Network, dict]:
    arrays, meta = load_checkpoint(directory)
    config = NetworkConfig.from_dict(meta["config"])
    return Network(config, {k: Tensor(v, name=k) for k, v in arrays.items()}), meta

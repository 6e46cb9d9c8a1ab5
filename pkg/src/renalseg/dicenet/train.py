"""SGD training loop for the U-Net with the (weighted) Dice loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..volgrid import LabelVolume, Volume3
from .loss import dice_loss, weighted_dice_loss
from .unet import UNet3d, _vol_to_batch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 4
    learning_rate: float = 0.01
    momentum: float = 0.9
    optimizer: str = "momentum"        # "momentum" or "sgd"
    clip_norm: float = 0.3             # global gradient-norm cap; 0 disables
    seed: int = 0
    loss: str = "weighted-dice"        # "weighted-dice" or "dice"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be >= 0")
        if self.optimizer not in ("momentum", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("weighted-dice", "dice"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class TrainTrace:
    epoch_losses: list = field(default_factory=list)
    batch_losses: list = field(default_factory=list)


def _loss_fn(name):
    return weighted_dice_loss if name == "weighted-dice" else dice_loss


def train(net: UNet3d, dataset, cfg: TrainConfig) -> TrainTrace:
    """dataset: list of (Volume3, LabelVolume) pairs at the net's input dims.

    Deterministic for a given (net seed, cfg seed): batch order comes from a
    dedicated generator and all reductions are sequential.
    """
    if not dataset:
        raise ValueError("empty training dataset")
    xs = [_vol_to_batch(vol)[0] for vol, _ in dataset]
    qs = [np.ascontiguousarray(mask.labels.transpose(2, 1, 0))[None].astype(np.float32)
          for _, mask in dataset]
    loss_fn = _loss_fn(cfg.loss)
    rng = np.random.default_rng(cfg.seed)
    velocity = [np.zeros_like(p.value) for p in net.params]
    trace = TrainTrace()

    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = np.stack([xs[i] for i in idx])
            q = np.stack([qs[i] for i in idx])
            net.zero_grads()
            p, cache = net.forward(x)
            loss, gp = loss_fn(p, q)
            net.backward(gp, cache)
            if cfg.clip_norm > 0:
                # A batch with very few foreground voxels can spike the
                # class-weighted gradients; cap the global norm to keep
                # momentum from overshooting into a dead network.
                gnorm = np.sqrt(sum(float((p.grad ** 2).sum())
                                    for p in net.params))
                if gnorm > cfg.clip_norm:
                    scale = cfg.clip_norm / gnorm
                    for prm in net.params:
                        prm.grad *= scale
            for v, prm in zip(velocity, net.params):
                if cfg.optimizer == "momentum":
                    v *= cfg.momentum
                    v -= cfg.learning_rate * prm.grad
                    prm.value += v
                else:
                    prm.value -= cfg.learning_rate * prm.grad
            epoch_losses.append(loss)
            trace.batch_losses.append(loss)
        trace.epoch_losses.append(float(np.mean(epoch_losses)))
    return trace

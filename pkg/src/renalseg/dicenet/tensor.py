"""Batch tensors and learnable parameters for the network engine."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError


@dataclass
class Tensor5:
    """batch x channel x depth x height x width value array with a gradient slot."""

    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 5:
            raise ShapeError(f"Tensor5 needs 5 dims, got shape {self.data.shape}")
        if self.grad is not None and self.grad.shape != self.data.shape:
            raise ShapeError(
                f"Tensor5 grad shape {self.grad.shape} != data shape {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape


class Param:
    """Named learnable array with an accumulated gradient."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float32)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0

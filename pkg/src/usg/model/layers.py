"""Parameter containers for the small building blocks (linear, MLP, attention)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import DimensionError, affine, as_matrix, matmul, relu, row_softmax


@dataclass(frozen=True)
class Linear:
    weight: np.ndarray
    bias: np.ndarray

    def __call__(self, x) -> np.ndarray:
        return affine(x, self.weight, self.bias)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def identity(cls, d: int) -> Linear:
        return cls(np.eye(d), np.zeros((1, d)))

    @classmethod
    def zeros(cls, d_in: int, d_out: int | None = None) -> Linear:
        d_out = d_in if d_out is None else d_out
        return cls(np.zeros((d_in, d_out)), np.zeros((1, d_out)))


@dataclass(frozen=True)
class MLP:
    """Two linear layers with a ReLU in between."""

    first: Linear
    second: Linear

    def __call__(self, x) -> np.ndarray:
        return self.second(relu(self.first(x)))

    @classmethod
    def identity(cls, d: int) -> MLP:
        # relu(x) - relu(-x) == x, so a 2d-wide hidden layer passes x through exactly
        eye = np.eye(d)
        return cls(Linear(np.hstack([eye, -eye]), np.zeros((1, 2 * d))),
                   Linear(np.vstack([eye, -eye]), np.zeros((1, d))))


@dataclass(frozen=True)
class Attention:
    """Single-head attention ``softmax(mask + F_q(x) F_k(y)^T) F_v(y)``.

    No 1/sqrt(d) scaling: the logits are the raw query-key products.
    """

    q: Linear
    k: Linear
    v: Linear

    def logits(self, x, y) -> np.ndarray:
        return matmul(self.q(x), self.k(y).T)

    def __call__(self, x, y, mask=None) -> np.ndarray:
        logits = self.logits(x, y)
        if mask is not None:
            mask = as_matrix(mask, "attention mask")
            if mask.shape != logits.shape:
                raise DimensionError(f"attention mask {mask.shape} does not match logits {logits.shape}")
            logits = mask + logits
        return matmul(row_softmax(logits), self.v(y))

    def with_value(self, v: Linear) -> Attention:
        return Attention(self.q, self.k, v)

    @classmethod
    def zero_value(cls, q: Linear, k: Linear) -> Attention:
        return cls(q, k, Linear.zeros(k.in_dim, q.out_dim))

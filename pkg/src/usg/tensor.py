"""Dense float64 matrix helpers shared by every attention and loss routine.

A "matrix" here is simply a 2-D ``numpy.ndarray`` of dtype float64. The
functions validate shapes up front so that errors name both operands instead
of surfacing as broadcasting accidents deep inside a forward pass.
"""

from __future__ import annotations

import zlib

import numpy as np

NEG_INF = float("-inf")


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(ValueError):
    """Raised on NaN (or otherwise unusable) numeric input."""


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a, "a"), as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def row_softmax(m) -> np.ndarray:
    """Softmax along each row.

    ``-inf`` entries receive exactly zero weight. A row that is entirely
    ``-inf`` becomes uniform, which keeps masked attention defined when a
    query's predicted mask is empty.
    """
    m = as_matrix(m)
    if np.isnan(m).any():
        raise NumericError("softmax input contains NaN")
    if np.isposinf(m).any():
        raise NumericError("softmax input contains +inf")
    out = np.empty_like(m)
    if m.shape[1] == 0:
        return out
    row_max = m.max(axis=1, keepdims=True)
    dead = np.isneginf(row_max[:, 0])
    live = ~dead
    if live.any():
        shifted = m[live] - row_max[live]
        e = np.exp(shifted)
        out[live] = e / e.sum(axis=1, keepdims=True)
    out[dead] = 1.0 / m.shape[1]
    return out


def cosine_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarity between rows of ``a`` and rows of ``b``.

    Zero-norm rows are treated as unrelated to everything (similarity 0).
    """
    a, b = as_matrix(a, "a"), as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"row dimensions differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    safe_a = np.where(na > 0, na, 1.0)
    safe_b = np.where(nb > 0, nb, 1.0)
    sim = (a / safe_a[:, None]) @ (b / safe_b[:, None]).T
    sim[na == 0, :] = 0.0
    sim[:, nb == 0] = 0.0
    return np.clip(sim, -1.0, 1.0)


def conv2d(x, kernel) -> np.ndarray:
    """Same-size 2-D cross-correlation with zero padding."""
    x, kernel = as_matrix(x, "input"), as_matrix(kernel, "kernel")
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"kernel dimensions must be odd, got {kernel.shape}")
    ph, pw = kh // 2, kw // 2
    h, w = x.shape
    padded = np.zeros((h + 2 * ph, w + 2 * pw))
    padded[ph:ph + h, pw:pw + w] = x
    out = np.zeros((h, w))
    for u in range(kh):
        for v in range(kw):
            if kernel[u, v] != 0.0:
                out += kernel[u, v] * padded[u:u + h, v:v + w]
    return out


def affine(x, weight, bias) -> np.ndarray:
    x, weight, bias = as_matrix(x, "x"), as_matrix(weight, "weight"), as_matrix(bias, "bias")
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(f"cannot apply weight {weight.shape} to input {x.shape}")
    if bias.shape != (1, weight.shape[1]):
        raise DimensionError(f"bias must be (1, {weight.shape[1]}), got {bias.shape}")
    return x @ weight + bias


def relu(x) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def rng_for(seed: int, name: str) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, name)``.

    Every named parameter gets its own Philox stream, so adding a parameter
    never shifts the values drawn for the others.
    """
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    key = np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(name.encode("utf-8")),))
    return np.random.Generator(np.random.Philox(key))


def uniform_init(seed: int, name: str, rows: int, cols: int, fan_in: int | None = None) -> np.ndarray:
    fan_in = rows if fan_in is None else fan_in
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng_for(seed, name).uniform(-bound, bound, size=(rows, cols))

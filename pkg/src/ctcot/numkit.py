"""Small deterministic numerical helpers shared by the rest of the package.

Matrices are plain ``float64`` numpy arrays; feature matrices are stored
d x L with one column per time step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FLOAT = np.float64


@dataclass
class LossResult:
    """A scalar loss with gradients shaped like its two inputs."""

    value: float
    grad_u: np.ndarray | None = None
    grad_v: np.ndarray | None = None
    info: dict = field(default_factory=dict)


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(x, dtype=FLOAT)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def logsumexp(v, axis=None):
    """Max-shifted log-sum-exp.

    With ``axis=None`` the input is treated as a flat vector and a float is
    returned. Otherwise reduces along ``axis`` like ``numpy.sum``.
    """
    v = np.asarray(v, dtype=FLOAT)
    if v.size == 0:
        raise ValueError("logsumexp of an empty vector")
    if axis is None:
        m = v.max()
        if not np.isfinite(m):
            return float(m)
        return float(m + np.log(np.exp(v - m).sum()))
    m = v.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = m + np.log(np.exp(v - m).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=FLOAT)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=FLOAT)
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


class RandStream:
    """Seeded generator factory.

    ``stream(i)`` hands out an independent ``numpy.random.Generator`` for
    sub-stream ``i``; the same (seed, index) pair always gives the same
    draws, whatever else has been consumed.
    """

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)

    def stream(self, *index: int) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(int(i) for i in index))
        return np.random.Generator(np.random.PCG64(ss))

    def uniform(self, size=None, index: int = 0):
        return self.stream(index).uniform(size=size)

    def normal(self, size=None, index: int = 0):
        return self.stream(index).standard_normal(size=size)


def rand_stream(seed: int) -> RandStream:
    return RandStream(seed)


# sub-stream indices, kept in one place so modules never collide
STREAM_PROTOTYPES = 0
STREAM_TRAIN_SAMPLES = 1
STREAM_EVAL_SAMPLES = 2
STREAM_INIT = 10
STREAM_SHUFFLE = 11
STREAM_DROPOUT = 12

"""Alternative speech/text alignment distances.

Euclidean and KL need equal-length inputs, so they run on the output of
a length matcher (global average, linear interpolation, or cosine
cross-attention). Adversarial and soft-DTW losses work on raw sequences.
Every matcher carries a ``backward`` so gradients reach the original
sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .numkit import LossResult, log_softmax, softmax
from .ot import _lp_cost, cost_backward, normalized_positions


@dataclass
class MatchedPair:
    u_tilde: np.ndarray
    v_tilde: np.ndarray
    backward: Callable = field(default=None, repr=False)

    @property
    def length(self) -> int:
        return self.u_tilde.shape[1]


def _check_nonempty(U, V):
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.ndim != 2 or V.ndim != 2 or U.shape[1] == 0 or V.shape[1] == 0:
        raise ValueError("sequences must be non-empty d x L matrices")
    if U.shape[0] != V.shape[0]:
        raise ValueError(f"feature dimensions differ: {U.shape[0]} vs {V.shape[0]}")
    return U, V


def match_average(U, V) -> MatchedPair:
    U, V = _check_nonempty(U, V)
    m, n = U.shape[1], V.shape[1]

    def backward(gu, gv):
        return np.repeat(gu, m, axis=1) / m, np.repeat(gv, n, axis=1) / n

    return MatchedPair(U.mean(axis=1, keepdims=True), V.mean(axis=1, keepdims=True), backward)


def interpolation_matrix(src_len: int, dst_len: int) -> np.ndarray:
    """M with X @ M = X linearly resampled to dst_len, endpoints aligned."""
    if src_len < 1 or dst_len < 1:
        raise ValueError("lengths must be >= 1")
    x = normalized_positions(dst_len) * (src_len - 1)
    lo = np.minimum(np.floor(x).astype(int), src_len - 1)
    hi = np.minimum(lo + 1, src_len - 1)
    frac = x - lo
    M = np.zeros((src_len, dst_len))
    cols = np.arange(dst_len)
    np.add.at(M, (lo, cols), 1.0 - frac)
    np.add.at(M, (hi, cols), frac)
    return M


def match_interpolate(U, V) -> MatchedPair:
    """Resample the longer sequence onto the shorter one's length."""
    U, V = _check_nonempty(U, V)
    m, n = U.shape[1], V.shape[1]
    if m >= n:
        M = interpolation_matrix(m, n)
        return MatchedPair(U @ M, V.copy(), lambda gu, gv: (gu @ M.T, gv))
    M = interpolation_matrix(n, m)
    return MatchedPair(U.copy(), V @ M, lambda gu, gv: (gu, gv @ M.T))


def _unit_columns(X: np.ndarray):
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        raise ValueError("cosine attention needs non-zero columns")
    return X / norms, norms


def _unit_columns_backward(Xbar, norms, g):
    return (g - Xbar * (Xbar * g).sum(axis=0)) / norms


def _softmax_cols_backward(A, gA):
    return A * (gA - (A * gA).sum(axis=0))


def match_attention(U, V) -> MatchedPair:
    """Cosine cross-attention: U~ = U softmax(Ubar^T Vbar), V~ = V softmax(Vbar^T Vbar).

    The softmax runs over the first axis, so every output column is a convex
    combination of source columns.
    """
    U, V = _check_nonempty(U, V)
    Ub, un = _unit_columns(U)
    Vb, vn = _unit_columns(V)
    A = softmax(Ub.T @ Vb, axis=0)  # m x n
    B = softmax(Vb.T @ Vb, axis=0)  # n x n

    def backward(gu, gv):
        gU = gu @ A.T
        gS = _softmax_cols_backward(A, U.T @ gu)
        gUb = Vb @ gS.T
        gVb = Ub @ gS
        gV = gv @ B.T
        gS2 = _softmax_cols_backward(B, V.T @ gv)
        gVb = gVb + Vb @ (gS2 + gS2.T)
        gU = gU + _unit_columns_backward(Ub, un, gUb)
        gV = gV + _unit_columns_backward(Vb, vn, gVb)
        return gU, gV

    return MatchedPair(U @ A, V @ B, backward)


MATCHERS = {
    "average": match_average,
    "interpolate": match_interpolate,
    "attention": match_attention,
}


def _check_pair(pair: MatchedPair):
    if pair.u_tilde.shape != pair.v_tilde.shape:
        raise ValueError(f"unmatched shapes {pair.u_tilde.shape} vs {pair.v_tilde.shape}")


def euclidean_loss(pair: MatchedPair) -> LossResult:
    _check_pair(pair)
    diff = pair.u_tilde - pair.v_tilde
    value = float(np.sqrt((diff * diff).sum()))
    g = diff / value if value > 0 else np.zeros_like(diff)
    return LossResult(value, g, -g)


def kl_loss(pair: MatchedPair) -> LossResult:
    """Sum over columns of KL(softmax(u~_i) || softmax(v~_i)), softmax over features."""
    _check_pair(pair)
    lu = log_softmax(pair.u_tilde, axis=0)
    lv = log_softmax(pair.v_tilde, axis=0)
    pu, pv = np.exp(lu), np.exp(lv)
    per_col = (pu * (lu - lv)).sum(axis=0)
    grad_u = pu * (lu - lv - per_col)
    grad_v = pv - pu
    return LossResult(float(per_col.sum()), grad_u, grad_v)


# --- adversarial ----------------------------------------------------------

LEAKY_SLOPE = 0.2
DISC_KEYS = ("disc.w1", "disc.b1", "disc.w2", "disc.b2", "disc.w3", "disc.b3")


@dataclass
class DiscriminatorParams:
    """Three affine layers d -> h -> h -> 1, leaky-ReLU + dropout after the first two."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    dropout_p: float = 0.1

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, hidden: int = 64, dropout_p: float = 0.1):
        def affine(fan_in, fan_out):
            bound = np.sqrt(6.0 / fan_in)
            return rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)

        w1, b1 = affine(d, hidden)
        w2, b2 = affine(hidden, hidden)
        w3, b3 = affine(hidden, 1)
        return cls(w1, b1, w2, b2, w3, b3, dropout_p)

    def tensors(self) -> dict[str, np.ndarray]:
        return dict(zip(DISC_KEYS, (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)))

    @classmethod
    def from_tensors(cls, t: dict, dropout_p: float = 0.1):
        return cls(*(t[k] for k in DISC_KEYS), dropout_p=dropout_p)


def _leaky(z):
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def _softplus(x):
    return np.logaddexp(0.0, x)


def bce_from_logit(logit, label):
    """Binary cross-entropy of sigmoid(logit) against a 0/1 label."""
    return _softplus(-logit) if label == 1 else _softplus(logit)


def discriminator_forward(X, disc: DiscriminatorParams, rng: np.random.Generator | None):
    keep = 1.0 - disc.dropout_p
    z1 = disc.w1 @ X + disc.b1[:, None]
    m1 = (rng.random(z1.shape) < keep) / keep if rng is not None else np.ones_like(z1)
    h1 = _leaky(z1) * m1
    z2 = disc.w2 @ h1 + disc.b2[:, None]
    m2 = (rng.random(z2.shape) < keep) / keep if rng is not None else np.ones_like(z2)
    h2 = _leaky(z2) * m2
    logit = (disc.w3 @ h2 + disc.b3[:, None])[0]
    return logit, (X, z1, m1, h1, z2, m2, h2)


def discriminator_backward(cache, disc: DiscriminatorParams, glogit):
    X, z1, m1, h1, z2, m2, h2 = cache
    g3 = glogit[None, :]
    grads = {"disc.w3": g3 @ h2.T, "disc.b3": g3.sum(axis=1)}
    gz2 = (disc.w3.T @ g3) * m2 * np.where(z2 > 0, 1.0, LEAKY_SLOPE)
    grads["disc.w2"] = gz2 @ h1.T
    grads["disc.b2"] = gz2.sum(axis=1)
    gz1 = (disc.w2.T @ gz2) * m1 * np.where(z1 > 0, 1.0, LEAKY_SLOPE)
    grads["disc.w1"] = gz1 @ X.T
    grads["disc.b1"] = gz1.sum(axis=1)
    gX = disc.w1.T @ gz1
    return grads, gX


def adversarial_losses(U, V, disc: DiscriminatorParams, mode: str, rng=None) -> LossResult:
    """Discriminator loss (speech -> 1, text -> 0) or generator loss (labels swapped).

    In ``train-disc`` mode only the discriminator gets gradients
    (``info["param_grads"]``); in ``train-gen`` mode only U and V do.
    ``info`` also reports both losses from the same forward pass.
    """
    if mode not in ("train-disc", "train-gen"):
        raise ValueError(f"unknown adversarial mode {mode!r}")
    U, V = _check_nonempty(U, V)
    if U.shape[0] != disc.w1.shape[1]:
        raise ValueError("feature dimension does not match the discriminator input")
    m = U.shape[1]
    X = np.hstack([U, V])
    logit, cache = discriminator_forward(X, disc, rng)
    speech = np.arange(X.shape[1]) < m
    sig = 1.0 / (1.0 + np.exp(-logit))
    l_disc = float(_softplus(-logit[speech]).sum() + _softplus(logit[~speech]).sum())
    l_gen = float(_softplus(logit[speech]).sum() + _softplus(-logit[~speech]).sum())
    labels = speech.astype(float) if mode == "train-disc" else (~speech).astype(float)
    glogit = sig - labels
    grads, gX = discriminator_backward(cache, disc, glogit)
    info = {"l_disc": l_disc, "l_gen": l_gen, "prob": sig}
    if mode == "train-disc":
        info["param_grads"] = grads
        return LossResult(l_disc, np.zeros_like(U), np.zeros_like(V), info)
    return LossResult(l_gen, gX[:, :m], gX[:, m:], info)


# --- soft-DTW --------------------------------------------------------------


def _softmin3(a, b, c, gamma):
    x = np.array([a, b, c]) / -gamma
    mx = x.max()
    if mx == -np.inf:
        return np.inf
    return -gamma * (mx + np.log(np.exp(x - mx).sum()))


def soft_dtw(U, V, smoothing: float = 1.0, p: float = 2.0) -> LossResult:
    """Soft-DTW over the l_p cost grid with an exact backward pass."""
    if not smoothing > 0:
        raise ValueError("smoothing must be > 0")
    U, V = _check_nonempty(U, V)
    D, diff = _lp_cost(U, V, p)
    m, n = D.shape
    g = smoothing
    R = np.full((m + 2, n + 2), np.inf)
    R[0, 0] = 0.0
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            R[i, j] = D[i - 1, j - 1] + _softmin3(R[i - 1, j - 1], R[i - 1, j], R[i, j - 1], g)
    value = float(R[m, n])

    Dp = np.zeros((m + 2, n + 2))
    Dp[1 : m + 1, 1 : n + 1] = D
    E = np.zeros((m + 2, n + 2))
    E[m + 1, n + 1] = 1.0
    R[1 : m + 1, n + 1] = -np.inf
    R[m + 1, 1 : n + 1] = -np.inf
    R[m + 1, n + 1] = R[m, n]
    for j in range(n, 0, -1):
        for i in range(m, 0, -1):
            a = np.exp((R[i + 1, j] - R[i, j] - Dp[i + 1, j]) / g)
            b = np.exp((R[i, j + 1] - R[i, j] - Dp[i, j + 1]) / g)
            c = np.exp((R[i + 1, j + 1] - R[i, j] - Dp[i + 1, j + 1]) / g)
            E[i, j] = E[i + 1, j] * a + E[i, j + 1] * b + E[i + 1, j + 1] * c
    gD = E[1 : m + 1, 1 : n + 1]
    gu, gv = cost_backward(diff, D, gD, p)
    return LossResult(value, gu, gv, {"alignment": gD})


def hard_dtw(U, V, p: float = 2.0) -> float:
    """Classic DTW dynamic program (min instead of soft-min)."""
    U, V = _check_nonempty(U, V)
    D, _ = _lp_cost(U, V, p)
    m, n = D.shape
    R = np.full((m + 1, n + 1), np.inf)
    R[0, 0] = 0.0
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            R[i, j] = D[i - 1, j - 1] + min(R[i - 1, j - 1], R[i - 1, j], R[i, j - 1])
    return float(R[m, n])

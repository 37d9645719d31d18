"""Connectionist temporal classification: loss, gradient, decoding, scoring.

Index 0 is the blank everywhere. Frame scores are log-probabilities laid
out S x (V+1), one row per (subsampled) frame.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numkit import logsumexp

BLANK = 0
NEG_INF = -np.inf


class CtcInfeasible(ValueError):
    """The target needs more frames than the input provides."""


@dataclass
class CtcResult:
    loss: float
    grad: np.ndarray  # d loss / d logits, S x (V+1)


def collapse(alignment: Sequence[int]) -> list[int]:
    """Merge consecutive duplicates, then drop blanks."""
    out = []
    prev = None
    for a in alignment:
        a = int(a)
        if a != prev and a != BLANK:
            out.append(a)
        prev = a
    return out


def min_frames(target: Sequence[int]) -> int:
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _check_inputs(lp: np.ndarray, target: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    lp = np.asarray(lp, dtype=np.float64)
    if lp.ndim != 2 or lp.shape[0] == 0:
        raise ValueError(f"frame log-probs must be a non-empty S x (V+1) matrix, got {lp.shape}")
    tgt = np.asarray(list(target), dtype=np.int64)
    if tgt.size and (tgt.min() < 1 or tgt.max() >= lp.shape[1]):
        raise ValueError("target tokens must lie in 1..V (blank 0 is not allowed)")
    return lp, tgt


def _extend(tgt: np.ndarray) -> np.ndarray:
    ext = np.zeros(2 * len(tgt) + 1, dtype=np.int64)
    ext[1::2] = tgt
    return ext


def ctc_loss(lp, target: Sequence[int]) -> CtcResult:
    """Negative log-likelihood of ``target`` summed over all alignments.

    ``lp`` holds per-frame log-softmax outputs. The returned gradient is with
    respect to the logits feeding that log-softmax.
    """
    lp, tgt = _check_inputs(lp, target)
    S = lp.shape[0]
    need = min_frames(tgt)
    if S < need:
        raise CtcInfeasible(f"target of length {len(tgt)} needs {need} frames, got {S}")

    ext = _extend(tgt)
    L = len(ext)
    # transitions s-2 -> s allowed for non-blank labels differing from ext[s-2]
    skip = np.zeros(L, dtype=bool)
    skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    emit = lp[:, ext]  # S x L

    alpha = np.full((S, L), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if L > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, S):
        prev = alpha[t - 1]
        step = np.full(L, NEG_INF)
        step[1:] = prev[:-1]
        jump = np.full(L, NEG_INF)
        jump[2:] = np.where(skip[2:], prev[:-2], NEG_INF)
        alpha[t] = np.logaddexp(np.logaddexp(prev, step), jump) + emit[t]

    beta = np.full((S, L), NEG_INF)
    beta[S - 1, L - 1] = emit[S - 1, L - 1]
    if L > 1:
        beta[S - 1, L - 2] = emit[S - 1, L - 2]
    skip_back = np.zeros(L, dtype=bool)
    skip_back[:-2] = skip[2:]
    for t in range(S - 2, -1, -1):
        nxt = beta[t + 1]
        step = np.full(L, NEG_INF)
        step[:-1] = nxt[1:]
        jump = np.full(L, NEG_INF)
        jump[:-2] = np.where(skip_back[:-2], nxt[2:], NEG_INF)
        beta[t] = np.logaddexp(np.logaddexp(nxt, step), jump) + emit[t]

    tail = alpha[S - 1, L - 1] if L == 1 else np.logaddexp(alpha[S - 1, L - 1], alpha[S - 1, L - 2])
    log_p = float(tail)

    # posterior occupancy of every (frame, label) pair
    log_occ = alpha + beta - emit - log_p
    occ = np.zeros_like(lp)
    np.add.at(occ, (slice(None), ext), np.exp(log_occ))
    grad = np.exp(lp) - occ
    return CtcResult(loss=max(-log_p, 0.0), grad=grad)


def collapsed_distribution(lp, max_paths: int = 10**7) -> dict[tuple[int, ...], float]:
    """Probability of every collapsed output, by enumerating all alignments."""
    lp = np.asarray(lp, dtype=np.float64)
    S, K = lp.shape
    if K**S > max_paths:
        raise ValueError(f"{K}^{S} alignments exceeds the enumeration bound {max_paths}")
    buckets: dict[tuple[int, ...], list[float]] = {}
    rows = range(S)
    for path in itertools.product(range(K), repeat=S):
        score = sum(lp[t, a] for t, a in zip(rows, path))
        buckets.setdefault(tuple(collapse(path)), []).append(score)
    return {k: math.exp(logsumexp(v)) for k, v in buckets.items()}


def ctc_brute_force(lp, target: Sequence[int], max_paths: int = 10**7) -> float:
    """Reference CTC loss by exhaustive enumeration; ``inf`` when unreachable."""
    lp, tgt = _check_inputs(lp, target)
    S, K = lp.shape
    if K**S > max_paths:
        raise ValueError(f"{K}^{S} alignments exceeds the enumeration bound {max_paths}")
    want = [int(x) for x in tgt]
    scores = []
    for path in itertools.product(range(K), repeat=S):
        if collapse(path) == want:
            scores.append(sum(lp[t, a] for t, a in enumerate(path)))
    if not scores:
        return math.inf
    return -logsumexp(scores)


def greedy_decode(lp) -> list[int]:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return collapse(np.argmax(np.asarray(lp), axis=1))


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    ref, hyp = list(ref), list(hyp)
    row = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        prev_diag, row[0] = row[0], i
        for j, h in enumerate(hyp, 1):
            cur = min(row[j] + 1, row[j - 1] + 1, prev_diag + (r != h))
            prev_diag, row[j] = row[j], cur
    return row[-1]


def wer(reference: Sequence, hypothesis: Sequence) -> float:
    if len(reference) == 0:
        raise ValueError("WER needs a non-empty reference")
    return edit_distance(reference, hypothesis) / len(reference)


def corpus_wer(pairs) -> float:
    """Total edits over total reference length."""
    edits = sum(edit_distance(r, h) for r, h in pairs)
    words = sum(len(r) for r, _ in pairs)
    if words == 0:
        raise ValueError("WER needs a non-empty reference")
    return edits / words

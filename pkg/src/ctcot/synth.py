"""Synthetic speech/transcript pairs with a known monotone alignment.

Each vocabulary item owns a fixed unit-norm prototype in R^f. A sample
repeats every transcript token's prototype for a random number of frames
and adds Gaussian noise. Segments are 0-based half-open ``[start, end)``
frame ranges, one per token, in transcript order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .ctc import min_frames
from .encoder import subsampled_length
from .fileio import atomic_write_text
from .numkit import STREAM_EVAL_SAMPLES, STREAM_PROTOTYPES, STREAM_TRAIN_SAMPLES, RandStream

SUBSAMPLE = 4
SEPARATION_SIGMAS = 2.0
MAX_REDRAWS = 1000


@dataclass
class SynthConfig:
    vocab: int = 20
    frame_dim: int = 16
    repeat_min: int = 5
    repeat_max: int = 8
    noise_sigma: float = 0.3
    transcript_len_min: int = 3
    transcript_len_max: int = 12
    n_samples: int = 500
    n_eval: int = 100
    seed: int = 0
    ctc_feasible_only: bool = True

    def __post_init__(self):
        if self.vocab < 2:
            raise ValueError("vocab must be >= 2")
        if self.frame_dim < 1:
            raise ValueError("frame_dim must be >= 1")
        if not 1 <= self.repeat_min <= self.repeat_max:
            raise ValueError("need 1 <= repeat_min <= repeat_max")
        if not 1 <= self.transcript_len_min <= self.transcript_len_max:
            raise ValueError("need 1 <= transcript_len_min <= transcript_len_max")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.n_samples < 0 or self.n_eval < 0:
            raise ValueError("sample counts must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        bad = sorted(set(d) - known)
        if bad:
            raise KeyError(bad[0])
        return cls(**d)


@dataclass
class Sample:
    frames: np.ndarray  # f x m
    transcript: list[int]
    segments: list[tuple[int, int]]

    @property
    def num_frames(self) -> int:
        return self.frames.shape[1]


def prototypes(cfg: SynthConfig) -> np.ndarray:
    """f x (V+1) matrix; column 0 (blank) is unused and left at zero.

    Redraws the whole set until every pair is more than
    ``SEPARATION_SIGMAS * noise_sigma`` apart.
    """
    rng = RandStream(cfg.seed).stream(STREAM_PROTOTYPES)
    need = SEPARATION_SIGMAS * cfg.noise_sigma
    for _ in range(MAX_REDRAWS):
        P = rng.standard_normal((cfg.frame_dim, cfg.vocab))
        P /= np.linalg.norm(P, axis=0)
        gaps = np.linalg.norm(P[:, :, None] - P[:, None, :], axis=0)
        gaps[np.diag_indices(cfg.vocab)] = np.inf
        if gaps.min() > need:
            return np.hstack([np.zeros((cfg.frame_dim, 1)), P])
    raise ValueError(f"could not draw prototypes separated by {need} in {MAX_REDRAWS} attempts")


def _draw_transcript(rng, cfg: SynthConfig) -> list[int]:
    # adjacent tokens always differ, so every token boundary is visible in the frames
    length = int(rng.integers(cfg.transcript_len_min, cfg.transcript_len_max + 1))
    out = [int(rng.integers(1, cfg.vocab + 1))]
    for _ in range(length - 1):
        nxt = int(rng.integers(1, cfg.vocab))
        out.append(nxt if nxt < out[-1] else nxt + 1)
    return out


def _draw_sample(rng, cfg: SynthConfig, protos: np.ndarray) -> Sample:
    tokens = _draw_transcript(rng, cfg)
    reps = rng.integers(cfg.repeat_min, cfg.repeat_max + 1, size=len(tokens))
    segments, start = [], 0
    for r in reps:
        segments.append((start, start + int(r)))
        start += int(r)
    clean = np.repeat(protos[:, tokens], reps, axis=1)
    frames = clean + cfg.noise_sigma * rng.standard_normal(clean.shape)
    return Sample(frames, tokens, segments)


def ctc_feasible(sample: Sample) -> bool:
    return subsampled_length(sample.num_frames) >= min_frames(sample.transcript)


def generate(cfg: SynthConfig, split: str = "train") -> list[Sample]:
    """Deterministic dataset. With ``ctc_feasible_only`` draws too short for
    their transcript after 4x subsampling are replaced from the same stream."""
    if split == "train":
        index, count = STREAM_TRAIN_SAMPLES, cfg.n_samples
    elif split == "eval":
        index, count = STREAM_EVAL_SAMPLES, cfg.n_eval
    else:
        raise ValueError(f"unknown split {split!r}")
    protos = prototypes(cfg)
    rng = RandStream(cfg.seed).stream(index)
    out = []
    while len(out) < count:
        for _ in range(MAX_REDRAWS):
            s = _draw_sample(rng, cfg, protos)
            if not cfg.ctc_feasible_only or ctc_feasible(s):
                break
        else:
            raise ValueError("configuration cannot produce CTC-feasible samples")
        out.append(s)
    return out


def alignment_mask(sample: Sample, factor: int = SUBSAMPLE) -> np.ndarray:
    """Boolean S x n: subsampled frame i covers original frames that touch token j."""
    S = -(-sample.num_frames // factor)
    mask = np.zeros((S, len(sample.transcript)), dtype=bool)
    for j, (a, b) in enumerate(sample.segments):
        mask[a // factor : (b - 1) // factor + 1, j] = True
    return mask


def diagonal_mass(plan, sample: Sample, factor: int = SUBSAMPLE) -> float:
    """Share of transport mass that agrees with the ground-truth alignment."""
    Z = np.asarray(getattr(plan, "plan", plan), dtype=np.float64)
    mask = alignment_mask(sample, factor)
    if Z.shape != mask.shape:
        raise ValueError(f"plan shape {Z.shape} does not match sample layout {mask.shape}")
    total = Z.sum()
    if total <= 0:
        raise ValueError("plan has no mass")
    return float(min(max(Z[mask].sum() / total, 0.0), 1.0))


# --- JSON I/O ---------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _matrix_json(M: np.ndarray) -> str:
    return "[" + ",".join("[" + ",".join(_fmt(x) for x in row) + "]" for row in M) + "]"


def dumps_dataset(samples: list[Sample]) -> str:
    items = []
    for s in samples:
        items.append(
            '{"frames":' + _matrix_json(s.frames)
            + ',"transcript":' + json.dumps([int(t) for t in s.transcript])
            + ',"segments":' + json.dumps([[int(a), int(b)] for a, b in s.segments])
            + "}"
        )
    return "[\n" + ",\n".join(items) + "\n]\n"


def loads_dataset(text: str) -> list[Sample]:
    raw = json.loads(text)
    if not isinstance(raw, list):
        raise ValueError("dataset must be a JSON list")
    out = []
    for k, item in enumerate(raw):
        try:
            frames = np.asarray(item["frames"], dtype=np.float64)
            transcript = [int(t) for t in item["transcript"]]
            segments = [(int(a), int(b)) for a, b in item["segments"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"sample {k}: malformed ({exc})") from None
        if frames.ndim != 2 or len(segments) != len(transcript):
            raise ValueError(f"sample {k}: inconsistent shapes")
        out.append(Sample(frames, transcript, segments))
    return out


def save_dataset(path, samples: list[Sample]) -> None:
    atomic_write_text(path, dumps_dataset(samples))


def load_dataset(path) -> list[Sample]:
    with open(path, encoding="utf-8") as fh:
        return loads_dataset(fh.read())

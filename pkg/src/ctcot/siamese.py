"""Siamese pre-training: CTC on the speech branch plus an alignment term
pulling speech features towards text features.

The total per batch is ``ctc_weight * ctc + alpha * aux``, where ``ctc`` is
the batch mean of per-token CTC loss (item loss / transcript length) and
``aux`` the batch mean of the chosen distance between branch outputs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import seqdist
from .ctc import CtcInfeasible, corpus_wer, ctc_loss, greedy_decode
from .encoder import (
    ModelSpec,
    check_params,
    init_params,
    load_checkpoint,
    merge_grads,
    speech_backward,
    speech_forward,
    text_backward,
    text_forward,
)
from .numkit import STREAM_DROPOUT, STREAM_INIT, STREAM_SHUFFLE, RandStream, log_softmax
from .ot import OtConfig, wasserstein_loss
from .synth import Sample, diagonal_mass

LOSS_KINDS = ("ctc", "ctc+ot", "ctc+euclidean", "ctc+kl", "ctc+adversarial", "ctc+softdtw")
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.98
ADAM_EPS = 1e-9


@dataclass
class TrainConfig:
    loss_kind: str = "ctc+ot"
    alpha: float = 0.1
    ctc_weight: float = 1.0
    ot: OtConfig = field(default_factory=OtConfig)
    length_match: str = "interpolate"
    share_last_layers: bool = False
    positional: bool = True
    lr_max: float = 3e-3
    warmup_steps: int = 100
    epochs: int = 50
    batch_size: int = 16
    seed: int = 0
    text_encoder_init: str | None = None
    d_model: int = 32
    speech_layers: int = 4
    text_layers: int = 2
    disc_hidden: int = 64
    disc_dropout: float = 0.1
    smoothing: float = 1.0
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.length_match not in seqdist.MATCHERS:
            raise ValueError(f"length_match must be one of {tuple(seqdist.MATCHERS)}")
        if self.alpha < 0 or self.ctc_weight < 0:
            raise ValueError("alpha and ctc_weight must be >= 0")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("need epochs >= 0 and batch_size >= 1")
        if not self.lr_max > 0 or not self.clip_norm > 0 or not self.smoothing > 0:
            raise ValueError("lr_max, clip_norm and smoothing must be > 0")
        if not 0 <= self.disc_dropout < 1:
            raise ValueError("disc_dropout must lie in [0, 1)")

    @property
    def aux_kind(self) -> str | None:
        return None if self.loss_kind == "ctc" else self.loss_kind.split("+", 1)[1]

    def effective_ot(self) -> OtConfig:
        return self.ot if self.positional else replace(self.ot, gamma=0.0)

    def to_dict(self) -> dict:
        """Flat dict without the nested OT section."""
        d = asdict(self)
        d.pop("ot")
        return d

    @classmethod
    def from_dict(cls, d: dict, ot: OtConfig | None = None) -> "TrainConfig":
        known = {f.name for f in fields(cls)} - {"ot"}
        bad = sorted(set(d) - known)
        if bad:
            raise KeyError(bad[0])
        return cls(ot=ot or OtConfig(), **d)


def model_spec(cfg: TrainConfig, vocab: int, frame_dim: int) -> ModelSpec:
    return ModelSpec(
        vocab=vocab,
        frame_dim=frame_dim,
        d_model=cfg.d_model,
        speech_layers=cfg.speech_layers,
        text_layers=cfg.text_layers,
        share_last_layers=cfg.share_last_layers,
    )


def lr_at(step: int, lr_max: float, warmup: int) -> float:
    """Linear warmup, then inverse square-root decay; peak lr_max at step == warmup."""
    if step < 1:
        raise ValueError("steps are counted from 1")
    return lr_max * min(step / warmup, math.sqrt(warmup / step))


@dataclass
class StepMetrics:
    step: int | None
    epoch: int
    ctc_loss: float
    aux_loss: float
    total: float
    lr: float
    grad_norm: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("step", "epoch", "ctc_loss", "aux_loss", "total", "lr", "grad_norm")}


@dataclass
class BatchLoss:
    total: float
    ctc_loss: float
    aux_loss: float
    grads: dict
    disc_grads: dict
    items: int
    skipped: int
    aux_skipped: int = 0


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, history: list, params: dict):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.history = history
        self.params = params


def _discriminator(params: dict, cfg: TrainConfig) -> seqdist.DiscriminatorParams:
    return seqdist.DiscriminatorParams.from_tensors(params, dropout_p=cfg.disc_dropout)


def aux_distance(H, Vf, params, cfg: TrainConfig, rng=None):
    """(value, grad_H, grad_V, disc_grads) for one item's auxiliary term."""
    kind = cfg.aux_kind
    if kind == "ot":
        r = wasserstein_loss(H, Vf, cfg.effective_ot())
        return r.value, r.grad_u, r.grad_v, {}
    if kind in ("euclidean", "kl"):
        pair = seqdist.MATCHERS[cfg.length_match](H, Vf)
        r = (seqdist.euclidean_loss if kind == "euclidean" else seqdist.kl_loss)(pair)
        gH, gV = pair.backward(r.grad_u, r.grad_v)
        return r.value, gH, gV, {}
    if kind == "softdtw":
        r = seqdist.soft_dtw(H, Vf, cfg.smoothing, cfg.ot.p)
        return r.value, r.grad_u, r.grad_v, {}
    if kind == "adversarial":
        disc = _discriminator(params, cfg)
        gen = seqdist.adversarial_losses(H, Vf, disc, "train-gen", rng)
        dis = seqdist.adversarial_losses(H, Vf, disc, "train-disc", rng)
        return gen.value, gen.grad_u, gen.grad_v, dis.info["param_grads"]
    raise ValueError(f"no auxiliary term for loss_kind {cfg.loss_kind!r}")


def combined_loss(batch: list[Sample], params: dict, spec: ModelSpec, cfg: TrainConfig, rng=None) -> BatchLoss:
    """Mean over feasible items of ctc_weight * ctc + alpha * aux, with gradients.

    Items whose transcript cannot fit the subsampled frames are skipped and
    counted. If a length matcher rejects an item (zero-norm column) only its
    auxiliary term is dropped, and that is counted too.
    """
    grads: dict = {}
    disc_grads: dict = {}
    ctc_vals, aux_vals = [], []
    skipped = aux_skipped = 0
    pending = []
    for s in batch:
        H, logits, s_cache = speech_forward(s.frames, params, spec)
        try:
            res = ctc_loss(log_softmax(logits.T, axis=1), s.transcript)
        except CtcInfeasible:
            skipped += 1
            continue
        n_tok = len(s.transcript)
        ctc_vals.append(res.loss / n_tok)
        dlogits = (cfg.ctc_weight / n_tok) * res.grad.T
        dH = None
        t_grads = {}
        if cfg.aux_kind is not None:
            Vf, t_cache = text_forward(s.transcript, params, spec)
            try:
                val, gH, gV, dg = aux_distance(H, Vf, params, cfg, rng)
            except ValueError:
                aux_skipped += 1
                val, gH, gV, dg = 0.0, np.zeros_like(H), np.zeros_like(Vf), {}
            aux_vals.append(val)
            dH = cfg.alpha * gH
            t_grads, _ = text_backward(t_cache, params, spec, cfg.alpha * gV)
            disc_grads = merge_grads(disc_grads, dg)
        s_grads, _ = speech_backward(s_cache, params, spec, dH=dH, dlogits=dlogits)
        pending.append(merge_grads(s_grads, t_grads))
    items = len(ctc_vals)
    for g in pending:
        grads = merge_grads(grads, g)
    if items:
        grads = {k: v / items for k, v in grads.items()}
        disc_grads = {k: v / items for k, v in disc_grads.items()}
    ctc_mean = float(np.mean(ctc_vals)) if items else 0.0
    aux_mean = float(np.mean(aux_vals)) if aux_vals else 0.0
    total = cfg.ctc_weight * ctc_mean + cfg.alpha * aux_mean
    # parameters the loss never touched still get explicit zero gradients
    for k in params:
        if not k.startswith("disc.") and k not in grads:
            grads[k] = np.zeros_like(params[k])
    return BatchLoss(total, ctc_mean, aux_mean, grads, disc_grads, items, skipped, aux_skipped)


def global_norm(grads: dict) -> float:
    return float(math.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_grads(grads: dict, max_norm: float) -> tuple[dict, float]:
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


class Adam:
    def __init__(self, params: dict, keys):
        self.keys = list(keys)
        self.m = {k: np.zeros_like(params[k]) for k in self.keys}
        self.v = {k: np.zeros_like(params[k]) for k in self.keys}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - ADAM_BETA1**self.t
        c2 = 1.0 - ADAM_BETA2**self.t
        for k in self.keys:
            g = grads[k]
            self.m[k] = ADAM_BETA1 * self.m[k] + (1 - ADAM_BETA1) * g
            self.v[k] = ADAM_BETA2 * self.v[k] + (1 - ADAM_BETA2) * g * g
            # in-place so shared layers stay one array for both branches
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + ADAM_EPS)


def load_text_encoder(params: dict, spec: ModelSpec, path) -> None:
    """Copy text-branch tensors from a checkpoint; any shape mismatch is an error."""
    src, _ = load_checkpoint(path)
    for key in spec.text_param_keys():
        if key not in src:
            raise ValueError(f"text encoder checkpoint lacks tensor {key}")
        if src[key].shape != params[key].shape:
            raise ValueError(f"tensor {key}: checkpoint shape {src[key].shape} != model shape {params[key].shape}")
        params[key][...] = src[key]


def initial_params(spec: ModelSpec, cfg: TrainConfig) -> dict:
    params = init_params(cfg.seed, spec)
    if cfg.text_encoder_init:
        load_text_encoder(params, spec, cfg.text_encoder_init)
    if cfg.aux_kind == "adversarial":
        rng = RandStream(cfg.seed).stream(STREAM_INIT, 1)
        disc = seqdist.DiscriminatorParams.init(rng, spec.d_model, cfg.disc_hidden, cfg.disc_dropout)
        params.update(disc.tensors())
    return params


def _infer_spec(dataset: list[Sample], cfg: TrainConfig) -> ModelSpec:
    vocab = max(max(s.transcript) for s in dataset)
    return model_spec(cfg, vocab, dataset[0].frames.shape[0])


def _epoch_summary(epoch: int, rows: list[StepMetrics]) -> StepMetrics:
    mean = lambda name: float(np.mean([getattr(r, name) for r in rows]))  # noqa: E731
    return StepMetrics(None, epoch, mean("ctc_loss"), mean("aux_loss"), mean("total"), rows[-1].lr, mean("grad_norm"))


def train(dataset: list[Sample], cfg: TrainConfig, spec: ModelSpec | None = None, params: dict | None = None):
    """Returns (params, history); history holds per-step rows then one summary row
    (``step=None``) after each epoch, as plain dicts in emission order."""
    if not dataset:
        raise ValueError("dataset is empty")
    spec = spec or _infer_spec(dataset, cfg)
    params = params if params is not None else initial_params(spec, cfg)
    check_params(params, spec)
    gen_keys = [k for k in params if not k.startswith("disc.")]
    disc_keys = [k for k in params if k.startswith("disc.")]
    opt = Adam(params, gen_keys)
    disc_opt = Adam(params, disc_keys) if disc_keys else None
    drop_rng = RandStream(cfg.seed).stream(STREAM_DROPOUT)
    history: list[dict] = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = RandStream(cfg.seed).stream(STREAM_SHUFFLE, epoch).permutation(len(dataset))
        rows = []
        for start in range(0, len(order), cfg.batch_size):
            step += 1
            batch = [dataset[i] for i in order[start : start + cfg.batch_size]]
            lr = lr_at(step, cfg.lr_max, cfg.warmup_steps)
            out = combined_loss(batch, params, spec, cfg, drop_rng)
            grads, norm = clip_grads(out.grads, cfg.clip_norm)
            if not (math.isfinite(out.total) and math.isfinite(norm)):
                raise TrainingDiverged(step, history, params)
            if out.items:
                opt.step(params, grads, lr)
                if disc_opt is not None:
                    dgrads, _ = clip_grads(out.disc_grads, cfg.clip_norm)
                    disc_opt.step(params, dgrads, lr)
            row = StepMetrics(step, epoch, out.ctc_loss, out.aux_loss, out.total, lr, norm)
            rows.append(row)
            history.append(row.to_dict())
        history.append(_epoch_summary(epoch, rows).to_dict())
    return params, history


def evaluate(params: dict, dataset: list[Sample], cfg: TrainConfig, spec: ModelSpec | None = None) -> dict:
    """Greedy-decode WER, mean debiased Wasserstein between branch outputs, and
    mean diagonal mass of the cross transport plan."""
    if not dataset:
        raise ValueError("dataset is empty")
    spec = spec or _infer_spec(dataset, cfg)
    ot_cfg = replace(cfg.effective_ot(), debias=True)
    pairs, dists, masses = [], [], []
    for s in dataset:
        H, logits, _ = speech_forward(s.frames, params, spec)
        pairs.append((s.transcript, greedy_decode(log_softmax(logits.T, axis=1))))
        Vf, _ = text_forward(s.transcript, params, spec)
        r = wasserstein_loss(H, Vf, ot_cfg)
        dists.append(r.value)
        masses.append(diagonal_mass(r.info["plan"], s))
    return {
        "wer": float(corpus_wer(pairs)),
        "mean_wasserstein": float(np.mean(dists)),
        "diagonal_mass": float(np.mean(masses)),
    }


def decode(params: dict, dataset: list[Sample], spec: ModelSpec) -> list[list[int]]:
    out = []
    for s in dataset:
        _, logits, _ = speech_forward(s.frames, params, spec)
        out.append(greedy_decode(log_softmax(logits.T, axis=1)))
    return out

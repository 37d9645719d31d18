"""Small MLP speech and text encoders with hand-written backward passes.

Parameters live in one flat ``dict[str, ndarray]``; the same dict is the
checkpoint schema. Keys:

    speech.in.w  (d, f)     speech.in.b  (d,)
    speech.h{k}.w (d, d)    speech.h{k}.b (d,)     k = 0 .. L_s-1
    speech.out.w (V+1, d)   speech.out.b (V+1,)
    text.embed   (V+1, d)
    text.h{k}.w  (d, d)     text.h{k}.b  (d,)      k = 0 .. L_t-1

With ``share_last_layers`` the text layers are not stored; text layer k
reads ``speech.h{L_s-L_t+k}`` instead, so both branches hit the same array.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .fileio import atomic_write_text
from .numkit import STREAM_INIT, RandStream


@dataclass(frozen=True)
class ModelSpec:
    vocab: int = 20
    frame_dim: int = 16
    d_model: int = 32
    speech_layers: int = 4
    text_layers: int = 2
    share_last_layers: bool = False

    def __post_init__(self):
        if self.vocab < 1 or self.frame_dim < 1 or self.d_model < 1:
            raise ValueError("vocab, frame_dim and d_model must be positive")
        if self.text_layers < 0 or self.speech_layers < self.text_layers:
            raise ValueError("need speech_layers >= text_layers >= 0")

    def text_layer_keys(self) -> list[str]:
        if self.share_last_layers:
            off = self.speech_layers - self.text_layers
            return [f"speech.h{off + k}" for k in range(self.text_layers)]
        return [f"text.h{k}" for k in range(self.text_layers)]

    def speech_layer_keys(self) -> list[str]:
        return [f"speech.h{k}" for k in range(self.speech_layers)]

    def shapes(self) -> dict[str, tuple]:
        d, f, K = self.d_model, self.frame_dim, self.vocab + 1
        out = {"speech.in.w": (d, f), "speech.in.b": (d,)}
        for key in self.speech_layer_keys():
            out[key + ".w"] = (d, d)
            out[key + ".b"] = (d,)
        out["speech.out.w"] = (K, d)
        out["speech.out.b"] = (K,)
        out["text.embed"] = (K, d)
        if not self.share_last_layers:
            for key in self.text_layer_keys():
                out[key + ".w"] = (d, d)
                out[key + ".b"] = (d,)
        return out

    def text_param_keys(self) -> list[str]:
        """Every tensor the text branch reads."""
        keys = ["text.embed"]
        for key in self.text_layer_keys():
            keys += [key + ".w", key + ".b"]
        return keys

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(seed: int, spec: ModelSpec) -> dict[str, np.ndarray]:
    """Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases."""
    rng = RandStream(seed).stream(STREAM_INIT)
    params = {}
    for key, shape in spec.shapes().items():
        if key.endswith(".b"):
            params[key] = np.zeros(shape)
            continue
        # embedding rows feed d-wide layers, so scale them like a d-input layer
        fan_in = spec.d_model if key == "text.embed" else shape[1]
        bound = np.sqrt(6.0 / fan_in)
        params[key] = rng.uniform(-bound, bound, size=shape)
    return params


def subsampled_length(m: int) -> int:
    half = (m + 1) // 2
    return (half + 1) // 2


def pair_average_matrix(m: int) -> np.ndarray:
    """P with X @ P averaging column pairs; an odd trailing column passes through."""
    k = (m + 1) // 2
    P = np.zeros((m, k))
    for j in range(k):
        cols = [c for c in (2 * j, 2 * j + 1) if c < m]
        P[cols, j] = 1.0 / len(cols)
    return P


def _relu(z):
    return np.maximum(z, 0.0)


def _dense_stack(h, params, keys):
    pre = []
    for key in keys:
        z = params[key + ".w"] @ h + params[key + ".b"][:, None]
        pre.append((h, z))
        h = _relu(z)
    return h, pre


def _dense_stack_backward(g, params, keys, pre, grads):
    for key, (h_in, z) in zip(reversed(keys), reversed(pre)):
        gz = g * (z > 0)
        _acc(grads, key + ".w", gz @ h_in.T)
        _acc(grads, key + ".b", gz.sum(axis=1))
        g = params[key + ".w"].T @ gz
    return g


def _acc(grads, key, value):
    if key in grads:
        grads[key] = grads[key] + value
    else:
        grads[key] = value


@dataclass
class ForwardCache:
    branch: str
    inputs: object
    stages: dict


def speech_forward(X, params, spec: ModelSpec):
    """Frames f x m -> (features d x ceil(m/4), logits (V+1) x ceil(m/4), cache)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("speech input must be a non-empty f x m matrix")
    if X.shape[0] != spec.frame_dim:
        raise ValueError(f"frame dim {X.shape[0]} != model frame_dim {spec.frame_dim}")
    z0 = params["speech.in.w"] @ X + params["speech.in.b"][:, None]
    h = _relu(z0)
    P1 = pair_average_matrix(h.shape[1])
    h = h @ P1
    P2 = pair_average_matrix(h.shape[1])
    h = h @ P2
    H, pre = _dense_stack(h, params, spec.speech_layer_keys())
    logits = params["speech.out.w"] @ H + params["speech.out.b"][:, None]
    cache = ForwardCache("speech", X, {"z0": z0, "P1": P1, "P2": P2, "pre": pre, "H": H})
    return H, logits, cache


def speech_backward(cache: ForwardCache, params, spec: ModelSpec, dH=None, dlogits=None):
    """Returns (parameter gradients, gradient w.r.t. the input frames)."""
    if cache.branch != "speech":
        raise ValueError("cache does not come from speech_forward")
    st = cache.stages
    H = st["H"]
    g = np.zeros_like(H) if dH is None else np.asarray(dH, dtype=np.float64)
    if g.shape != H.shape:
        raise ValueError(f"feature gradient shape {g.shape} != {H.shape}")
    grads: dict[str, np.ndarray] = {}
    if dlogits is not None:
        if dlogits.shape != (spec.vocab + 1, H.shape[1]):
            raise ValueError("logit gradient has the wrong shape")
        grads["speech.out.w"] = dlogits @ H.T
        grads["speech.out.b"] = dlogits.sum(axis=1)
        g = g + params["speech.out.w"].T @ dlogits
    else:
        grads["speech.out.w"] = np.zeros_like(params["speech.out.w"])
        grads["speech.out.b"] = np.zeros_like(params["speech.out.b"])
    g = _dense_stack_backward(g, params, spec.speech_layer_keys(), st["pre"], grads)
    g = g @ st["P2"].T @ st["P1"].T
    gz0 = g * (st["z0"] > 0)
    grads["speech.in.w"] = gz0 @ cache.inputs.T
    grads["speech.in.b"] = gz0.sum(axis=1)
    return grads, params["speech.in.w"].T @ gz0


def text_forward(tokens, params, spec: ModelSpec):
    """Token ids -> (features d x n, cache). Columns never mix."""
    tok = np.asarray(list(tokens), dtype=np.int64)
    if tok.ndim != 1 or tok.size == 0:
        raise ValueError("token sequence must be non-empty")
    if tok.min() < 0 or tok.max() > spec.vocab:
        raise ValueError(f"token ids must lie in 0..{spec.vocab}")
    h = params["text.embed"][tok].T
    out, pre = _dense_stack(h, params, spec.text_layer_keys())
    return out, ForwardCache("text", tok, {"pre": pre})


def text_backward(cache: ForwardCache, params, spec: ModelSpec, dV):
    """Returns (parameter gradients, gradient w.r.t. the embedded inputs)."""
    if cache.branch != "text":
        raise ValueError("cache does not come from text_forward")
    dV = np.asarray(dV, dtype=np.float64)
    if dV.shape != (spec.d_model, cache.inputs.size):
        raise ValueError(f"feature gradient shape {dV.shape} does not match forward")
    grads: dict[str, np.ndarray] = {}
    g = _dense_stack_backward(dV, params, spec.text_layer_keys(), cache.stages["pre"], grads)
    emb = np.zeros_like(params["text.embed"])
    np.add.at(emb, cache.inputs, g.T)
    grads["text.embed"] = emb
    return grads, g


def merge_grads(*parts: dict) -> dict[str, np.ndarray]:
    """Sum gradient dicts key by key (shared tensors collect both branches)."""
    out: dict[str, np.ndarray] = {}
    for part in parts:
        for k, v in part.items():
            _acc(out, k, v)
    return out


def check_params(params: dict, spec: ModelSpec, extra_prefix: str = "disc.") -> None:
    want = spec.shapes()
    for key, shape in want.items():
        if key not in params:
            raise ValueError(f"missing tensor {key}")
        if tuple(params[key].shape) != shape:
            raise ValueError(f"tensor {key} has shape {params[key].shape}, expected {shape}")
    for key in params:
        if key not in want and not key.startswith(extra_prefix):
            raise ValueError(f"unexpected tensor {key}")


# --- checkpoints ------------------------------------------------------------

CHECKPOINT_FORMAT = "ctcot-checkpoint/1"


def dumps_checkpoint(params: dict, meta: dict) -> str:
    """JSON text: {"format", "meta", "tensors": {key: {"shape", "data"}}}, keys sorted."""
    tensors = {}
    for key in sorted(params):
        arr = np.asarray(params[key], dtype=np.float64)
        tensors[key] = {"shape": list(arr.shape), "data": [float(x) for x in arr.ravel()]}
    doc = {"format": CHECKPOINT_FORMAT, "meta": meta, "tensors": tensors}
    return json.dumps(doc, sort_keys=True) + "\n"


def loads_checkpoint(text: str) -> tuple[dict, dict]:
    doc = json.loads(text)
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a checkpoint file")
    params = {}
    for key, t in doc["tensors"].items():
        arr = np.asarray(t["data"], dtype=np.float64)
        shape = tuple(t["shape"])
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"tensor {key}: data does not match shape {shape}")
        params[key] = arr.reshape(shape)
    return params, doc.get("meta", {})


def save_checkpoint(path, params: dict, meta: dict) -> None:
    atomic_write_text(path, dumps_checkpoint(params, meta))


def load_checkpoint(path) -> tuple[dict, dict]:
    with open(path, encoding="utf-8") as fh:
        return loads_checkpoint(fh.read())

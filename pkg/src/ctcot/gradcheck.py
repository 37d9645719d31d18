"""Central finite-difference checks for every hand-written gradient.

An entry passes when ``|analytic - fd| <= atol + rtol * max(|analytic|, |fd|)``.
The reported relative error ignores entries whose scale is below ``atol``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import seqdist
from .ctc import ctc_loss
from .encoder import ModelSpec, init_params, speech_backward, speech_forward, text_backward, text_forward
from .numkit import RandStream, log_softmax
from .ot import OtConfig, wasserstein_loss
from .siamese import TrainConfig, combined_loss, initial_params, model_spec
from .synth import SynthConfig, generate

FD_STEP = 1e-5
ATOL = 1e-8
MAX_ENTRIES = 12
FD_OT = OtConfig(lam=1.0, gamma=1.0, tol=1e-12, max_iter=20000)


@dataclass
class CheckResult:
    module: str
    op: str
    max_rel: float
    max_abs: float
    rtol: float
    checked: int
    passed: bool


def fd_compare(f: Callable, x: np.ndarray, analytic: np.ndarray, rtol: float, rng, h: float = FD_STEP):
    """(max_rel, max_abs, passed, n_checked) over a random subset of entries of x."""
    idx = list(np.ndindex(x.shape))
    if len(idx) > MAX_ENTRIES:
        # the first entry is always kept so a corrupted flat[0] cannot slip through
        pick = 1 + rng.choice(len(idx) - 1, size=MAX_ENTRIES - 1, replace=False)
        idx = [idx[0]] + [idx[i] for i in sorted(pick)]
    max_rel = max_abs = 0.0
    ok = True
    for i in idx:
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        fd = (f(xp) - f(xm)) / (2 * h)
        a = float(analytic[i])
        err = abs(a - fd)
        scale = max(abs(a), abs(fd))
        max_abs = max(max_abs, err)
        if scale > ATOL:
            max_rel = max(max_rel, err / scale)
        ok &= err <= ATOL + rtol * scale
    return max_rel, max_abs, bool(ok), len(idx)


def _corrupted(g: np.ndarray) -> np.ndarray:
    g = np.array(g, dtype=np.float64)
    g.flat[0] = g.flat[0] * 1.05 + 1e-3
    return g


# each case: (module, op, rtol, f, x, analytic gradient)


def _ctc_cases(rng):
    S, K = 7, 5
    z = rng.normal(size=(S, K))
    target = [1, 3, 3, 2]

    def f(x):
        return ctc_loss(log_softmax(x, axis=1), target).loss

    yield "ctc", "ctc_loss", 1e-4, f, z, ctc_loss(log_softmax(z, axis=1), target).grad


def _ot_cases(rng):
    U = rng.normal(size=(3, 6))
    V = rng.normal(size=(3, 4))
    for debias in (True, False):
        cfg = replace(FD_OT, debias=debias)
        r = wasserstein_loss(U, V, cfg)
        name = "wasserstein" + ("_debiased" if debias else "")
        yield "ot", name + "[u]", 1e-3, lambda x: wasserstein_loss(x, V, cfg).value, U, r.grad_u
        yield "ot", name + "[v]", 1e-3, lambda x: wasserstein_loss(U, x, cfg).value, V, r.grad_v


def _seqdist_cases(rng):
    U = rng.normal(size=(4, 7))
    V = rng.normal(size=(4, 3))
    for mname, match in seqdist.MATCHERS.items():
        for lname, loss, rtol in (("euclidean", seqdist.euclidean_loss, 1e-6), ("kl", seqdist.kl_loss, 1e-4)):
            pair = match(U, V)
            r = loss(pair)
            gu, gv = pair.backward(r.grad_u, r.grad_v)
            op = f"{lname}/{mname}"
            yield "seqdist", op + "[u]", rtol, lambda x, m=match, l=loss: l(m(x, V)).value, U, gu
            yield "seqdist", op + "[v]", rtol, lambda x, m=match, l=loss: l(m(U, x)).value, V, gv
    r = seqdist.soft_dtw(U, V, 0.5)
    yield "seqdist", "soft_dtw[u]", 1e-3, lambda x: seqdist.soft_dtw(x, V, 0.5).value, U, r.grad_u
    yield "seqdist", "soft_dtw[v]", 1e-3, lambda x: seqdist.soft_dtw(U, x, 0.5).value, V, r.grad_v
    disc = seqdist.DiscriminatorParams.init(rng, 4, 8, dropout_p=0.0)
    gen = seqdist.adversarial_losses(U, V, disc, "train-gen")
    yield "seqdist", "adversarial_gen[u]", 1e-4, lambda x: seqdist.adversarial_losses(x, V, disc, "train-gen").value, U, gen.grad_u
    yield "seqdist", "adversarial_gen[v]", 1e-4, lambda x: seqdist.adversarial_losses(U, x, disc, "train-gen").value, V, gen.grad_v
    dis = seqdist.adversarial_losses(U, V, disc, "train-disc")
    tensors = disc.tensors()
    for key, g in dis.info["param_grads"].items():

        def f(x, key=key):
            t = dict(tensors)
            t[key] = x
            return seqdist.adversarial_losses(U, V, seqdist.DiscriminatorParams.from_tensors(t, 0.0), "train-disc").value

        yield "seqdist", f"adversarial_disc[{key}]", 1e-4, f, tensors[key], g


def _encoder_cases(rng):
    # composed loss: CTC on the speech logits plus a Euclidean pull between branches
    spec = ModelSpec(vocab=4, frame_dim=5, d_model=6, speech_layers=3, text_layers=2, share_last_layers=True)
    params = init_params(int(rng.integers(2**31)), spec)
    X = rng.normal(size=(5, 22))
    target = [1, 2, 4]

    def loss_and_grads(p):
        H, logits, sc = speech_forward(X, p, spec)
        Vf, tc = text_forward(target, p, spec)
        res = ctc_loss(log_softmax(logits.T, axis=1), target)
        pair = seqdist.match_interpolate(H, Vf)
        e = seqdist.euclidean_loss(pair)
        gH, gV = pair.backward(e.grad_u, e.grad_v)
        sg, _ = speech_backward(sc, p, spec, dH=gH, dlogits=res.grad.T)
        tg, _ = text_backward(tc, p, spec, gV)
        grads = dict(sg)
        for k, v in tg.items():
            grads[k] = grads[k] + v if k in grads else v
        return res.loss + e.value, grads

    _, grads = loss_and_grads(params)
    for key in sorted(params):

        def f(x, key=key):
            p = dict(params)
            p[key] = x
            return loss_and_grads(p)[0]

        yield "encoder", key, 1e-4, f, params[key], grads[key]


def _siamese_cases(rng):
    sc = SynthConfig(vocab=5, frame_dim=6, n_samples=3, n_eval=0, transcript_len_max=5, seed=int(rng.integers(1000)))
    batch = generate(sc)
    cfg = TrainConfig(loss_kind="ctc+ot", d_model=8, speech_layers=2, text_layers=1, ot=FD_OT)
    spec = model_spec(cfg, sc.vocab, sc.frame_dim)
    params = initial_params(spec, cfg)
    out = combined_loss(batch, params, spec, cfg)
    for key in ("speech.in.w", "speech.h1.w", "speech.out.w", "text.embed", "text.h0.w"):

        def f(x, key=key):
            p = dict(params)
            p[key] = x
            return combined_loss(batch, p, spec, cfg).total

        yield "siamese", f"combined_loss[{key}]", 1e-3, f, params[key], out.grads[key]


SUITES = {
    "ctc": _ctc_cases,
    "ot": _ot_cases,
    "seqdist": _seqdist_cases,
    "encoder": _encoder_cases,
    "siamese": _siamese_cases,
}


def run_suites(seed: int = 0, modules=None, corrupt: str | None = None) -> list[CheckResult]:
    """Run the selected suites; ``corrupt`` names an op whose analytic gradient
    is perturbed before comparison (harness self-test)."""
    modules = list(SUITES) if modules in (None, "all") else ([modules] if isinstance(modules, str) else list(modules))
    unknown = [m for m in modules if m not in SUITES]
    if unknown:
        raise ValueError(f"unknown gradcheck module {unknown[0]!r}")
    results = []
    for m in modules:
        rng = RandStream(seed).stream(100 + list(SUITES).index(m))
        for module, op, rtol, f, x, g in SUITES[m](rng):
            if corrupt is not None and (corrupt == op or corrupt == "all"):
                g = _corrupted(g)
            rel, ab, ok, n = fd_compare(f, x, g, rtol, rng)
            results.append(CheckResult(module, op, rel, ab, rtol, n, ok))
    return results


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'module':<8} {'op':<40} {'max_rel':>10} {'max_abs':>10} {'rtol':>7}  result"]
    for r in results:
        lines.append(
            f"{r.module:<8} {r.op:<40} {r.max_rel:>10.2e} {r.max_abs:>10.2e} {r.rtol:>7.0e}  {'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)

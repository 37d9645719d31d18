"""Command-line entry point: ``ctcot <command> ...`` or ``python -m ctcot``.

Exit codes: 0 success, 1 check failure, 2 bad input, 3 training diverged,
4 checkpoint/data incompatibility.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import gradcheck, seqdist
from .encoder import ModelSpec, check_params, load_checkpoint, save_checkpoint
from .fileio import atomic_write_text, dump_json, load_matrix
from .numkit import RandStream
from .ot import OtConfig, wasserstein_loss
from .siamese import TrainConfig, TrainingDiverged, decode, evaluate, model_spec, train
from .synth import SynthConfig, generate, load_dataset, save_dataset

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_DIVERGED, EXIT_INCOMPATIBLE = 0, 1, 2, 3, 4
SECTIONS = ("train", "synth", "ot")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    @property
    def ot(self) -> OtConfig:
        return self.train.ot

    def to_dict(self) -> dict:
        return {"train": self.train.to_dict(), "synth": self.synth.to_dict(), "ot": self.ot.to_dict()}


def parse_run_config(doc) -> RunConfig:
    """Build a RunConfig from ``{"train": {...}, "synth": {...}, "ot": {...}}``.

    Every section is optional; unknown sections or keys raise a CliError
    naming the offending key.
    """
    if not isinstance(doc, dict):
        raise CliError(EXIT_INPUT, "config must be a JSON object")
    for key in doc:
        if key not in SECTIONS:
            raise CliError(EXIT_INPUT, f"unknown config key {key!r} (expected sections {SECTIONS})")
    parts = {}
    for name, cls in (("ot", OtConfig), ("synth", SynthConfig)):
        sec = doc.get(name, {})
        if not isinstance(sec, dict):
            raise CliError(EXIT_INPUT, f"config section {name!r} must be an object")
        known = _public_keys(cls)
        for key in sec:
            if key not in known:
                raise CliError(EXIT_INPUT, f"unknown config key '{name}.{key}'")
        try:
            parts[name] = cls.from_dict(sec)
        except (TypeError, ValueError) as exc:
            raise CliError(EXIT_INPUT, f"bad value in config section {name!r}: {exc}") from None
    sec = doc.get("train", {})
    if not isinstance(sec, dict):
        raise CliError(EXIT_INPUT, "config section 'train' must be an object")
    try:
        train_cfg = TrainConfig.from_dict(sec, ot=parts["ot"])
    except KeyError as exc:
        raise CliError(EXIT_INPUT, f"unknown config key 'train.{exc.args[0]}'") from None
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"bad value in config section 'train': {exc}") from None
    return RunConfig(train_cfg, parts["synth"])


def _public_keys(cls) -> set:
    return set(cls().to_dict())


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_INPUT, f"cannot read config {path}: {exc}") from None
    return parse_run_config(doc)


def _load_data(path):
    try:
        return load_dataset(path)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"cannot read dataset {path}: {exc}") from None


def _check_compatible(dataset, spec: ModelSpec):
    for k, s in enumerate(dataset):
        if s.frames.shape[0] != spec.frame_dim:
            raise CliError(EXIT_INCOMPATIBLE, f"sample {k}: frame dim {s.frames.shape[0]} != model frame_dim {spec.frame_dim}")
        if s.transcript and (min(s.transcript) < 1 or max(s.transcript) > spec.vocab):
            raise CliError(EXIT_INCOMPATIBLE, f"sample {k}: token outside vocabulary 1..{spec.vocab}")


# --- commands ---------------------------------------------------------------


def cmd_gen_data(args) -> int:
    run = load_run_config(args.config)
    samples = generate(run.synth, split=args.split)
    save_dataset(args.out, samples)
    print(f"wrote {len(samples)} {args.split} samples (seed {run.synth.seed}) to {args.out}")
    return EXIT_OK


def _write_metrics(path: Path, history: list) -> None:
    atomic_write_text(path, "".join(json.dumps(row) + "\n" for row in history))


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    dataset = _load_data(args.data)
    if not dataset:
        raise CliError(EXIT_INPUT, "dataset is empty")
    spec = model_spec(run.train, run.synth.vocab, run.synth.frame_dim)
    _check_compatible(dataset, spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.json", dump_json(run.to_dict()))
    try:
        params, history = train(dataset, run.train, spec)
    except TrainingDiverged as exc:
        _write_metrics(out / "metrics.jsonl", exc.history)
        last = max((r["step"] for r in exc.history if r["step"] is not None), default=0)
        print(f"training diverged at step {exc.step}; last finite step {last}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None
    _write_metrics(out / "metrics.jsonl", history)
    meta = {"model": spec.to_dict(), **run.to_dict()}
    save_checkpoint(out / "checkpoint.json", params, meta)
    steps = sum(1 for r in history if r["step"] is not None)
    print(f"trained {run.train.epochs} epochs ({steps} steps); outputs in {out}")
    return EXIT_OK


def _load_model(path):
    try:
        params, meta = load_checkpoint(path)
        spec = ModelSpec(**meta["model"])
        run = parse_run_config({k: meta[k] for k in SECTIONS if k in meta})
        check_params(params, spec)
    except CliError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_INPUT, f"cannot read checkpoint {path}: {exc}") from None
    return params, spec, run


def cmd_eval(args) -> int:
    params, spec, run = _load_model(args.checkpoint)
    dataset = _load_data(args.data)
    if not dataset:
        raise CliError(EXIT_INPUT, "dataset is empty")
    _check_compatible(dataset, spec)
    report = evaluate(params, dataset, run.train, spec)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_decode(args) -> int:
    params, spec, _ = _load_model(args.checkpoint)
    dataset = _load_data(args.data)
    _check_compatible(dataset, spec)
    for s, hyp in zip(dataset, decode(params, dataset, spec)):
        print(json.dumps({"reference": s.transcript, "hypothesis": hyp}))
    return EXIT_OK


def cmd_loss(args) -> int:
    try:
        U = load_matrix(args.u_file)
        V = load_matrix(args.v_file)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"cannot parse matrix: {exc}") from None
    if U.shape[0] != V.shape[0]:
        raise CliError(EXIT_INPUT, f"feature dims differ: {U.shape[0]} vs {V.shape[0]}")
    report = {}
    try:
        if args.kind == "ot":
            cfg = OtConfig(lam=args.lam, p=args.p, gamma=args.gamma, debias=not args.no_debias, tol=args.tol)
            r = wasserstein_loss(U, V, cfg)
            report["transport_cost"] = r.info["transport_cost"]
            gu, gv = r.grad_u, r.grad_v
        elif args.kind in ("euclidean", "kl"):
            pair = seqdist.MATCHERS[args.match](U, V)
            r = (seqdist.euclidean_loss if args.kind == "euclidean" else seqdist.kl_loss)(pair)
            gu, gv = pair.backward(r.grad_u, r.grad_v)
        elif args.kind == "softdtw":
            r = seqdist.soft_dtw(U, V, args.smoothing, args.p)
            gu, gv = r.grad_u, r.grad_v
        else:
            rng = RandStream(args.seed).stream(0)
            disc = seqdist.DiscriminatorParams.init(rng, U.shape[0], args.disc_hidden, dropout_p=0.0)
            r = seqdist.adversarial_losses(U, V, disc, "train-gen")
            report["l_disc"] = r.info["l_disc"]
            gu, gv = r.grad_u, r.grad_v
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None
    report["value"] = r.value
    report["grad_norms"] = {"u": float(np.linalg.norm(gu)), "v": float(np.linalg.norm(gv))}
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suites(args.seed, args.module, corrupt=args.corrupt)
    print(gradcheck.format_table(results))
    failed = [f"{r.module}:{r.op}" for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed), file=sys.stderr)
        return EXIT_CHECK
    print(f"all {len(results)} checks passed")
    return EXIT_OK


PLOT_METRICS = ("ctc_loss", "aux_loss", "total")
PLOT_COLORS = ("#1f77b4", "#d62728", "#2ca02c")


def render_svg(rows: list[dict], width: int = 640, height: int = 400) -> str:
    """Loss curves against metrics-line index, one polyline per metric."""
    left, right, top, bottom = 60, 20, 20, 50
    series = {m: [float(r[m]) for r in rows] for m in PLOT_METRICS}
    finite = [v for vals in series.values() for v in vals if math.isfinite(v)]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if hi <= lo:
        hi = lo + 1.0
    n = len(rows)
    pw, ph = width - left - right, height - top - bottom

    def xy(i, v):
        x = left + (pw * i / (n - 1) if n > 1 else pw / 2)
        y = top + ph * (1 - (v - lo) / (hi - lo))
        return f"{x:.2f},{y:.2f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left + pw / 2:.2f}" y="{height - 12}" text-anchor="middle" font-size="12">metrics line</text>',
        f'<text x="14" y="{top + ph / 2:.2f}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {top + ph / 2:.2f})">loss</text>',
        f'<text x="{left - 4}" y="{top + 4}" text-anchor="end" font-size="10">{hi:.4g}</text>',
        f'<text x="{left - 4}" y="{top + ph}" text-anchor="end" font-size="10">{lo:.4g}</text>',
    ]
    for k, (name, color) in enumerate(zip(PLOT_METRICS, PLOT_COLORS)):
        pts = " ".join(xy(i, v) for i, v in enumerate(series[name]) if math.isfinite(v))
        out.append(f'<polyline data-metric="{escape(name)}" fill="none" stroke="{color}" points="{pts}"/>')
        out.append(f'<text x="{left + pw - 4}" y="{top + 14 + 14 * k}" text-anchor="end" font-size="11" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(args) -> int:
    rows = []
    try:
        with open(args.metrics, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    missing = [m for m in PLOT_METRICS if m not in row]
                    if missing:
                        raise ValueError(f"metrics line lacks {missing[0]!r}")
                    rows.append(row)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"cannot read metrics {args.metrics}: {exc}") from None
    if not rows:
        raise CliError(EXIT_INPUT, "metrics file is empty")
    atomic_write_text(args.out, render_svg(rows))
    print(f"wrote {args.out} ({len(rows)} points per curve)")
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def _defaults_epilog() -> str:
    run = RunConfig()
    return "config file defaults (JSON object with optional sections):\n" + json.dumps(run.to_dict(), indent=2, sort_keys=True)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="ctcot", description=__doc__, formatter_class=fmt, epilog=_defaults_epilog())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset", formatter_class=fmt, epilog=_defaults_epilog())
    p.add_argument("--config", help="run config JSON (defaults if omitted)")
    p.add_argument("--out", required=True, help="dataset JSON to write")
    p.add_argument("--split", choices=("train", "eval"), default="train", help="train uses n_samples, eval uses n_eval (default: train)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the speech/text encoders", formatter_class=fmt, epilog=_defaults_epilog())
    p.add_argument("--config", help="run config JSON (defaults if omitted)")
    p.add_argument("--data", required=True, help="training dataset JSON")
    p.add_argument("--out-dir", required=True, help="directory for checkpoint.json, metrics.jsonl, config.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="report WER, mean Wasserstein and diagonal mass")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="greedy CTC transcripts, one JSON line per sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("loss", help="evaluate one alignment loss on two d x L matrices")
    p.add_argument("--kind", required=True, choices=("ot", "euclidean", "kl", "softdtw", "adversarial"))
    p.add_argument("--u-file", required=True, help="JSON nested list, d rows x m columns")
    p.add_argument("--v-file", required=True, help="JSON nested list, d rows x n columns")
    p.add_argument("--p", type=float, default=2.0, help="l_p cost exponent (default: 2)")
    p.add_argument("--gamma", type=float, default=1.0, help="positional weight for ot (default: 1)")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="entropic weight for ot (default: 1)")
    p.add_argument("--tol", type=float, default=1e-9, help="Sinkhorn marginal tolerance (default: 1e-9)")
    p.add_argument("--no-debias", action="store_true", help="report the plain entropic objective")
    p.add_argument("--match", choices=tuple(seqdist.MATCHERS), default="interpolate", help="length matcher (default: interpolate)")
    p.add_argument("--smoothing", type=float, default=1.0, help="soft-DTW smoothing (default: 1)")
    p.add_argument("--disc-hidden", type=int, default=64, help="adversarial discriminator width (default: 64)")
    p.add_argument("--seed", type=int, default=0, help="discriminator init seed (default: 0)")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--module", default="all", choices=("all", *gradcheck.SUITES))
    p.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("plot", help="SVG of loss curves from metrics.jsonl")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

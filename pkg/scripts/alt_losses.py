#!/usr/bin/env python3
"""Short training runs of every auxiliary loss; prints final-epoch metrics and
eval WER for each (kind, length matcher) pair."""

import argparse
import json

from ctcot.siamese import TrainConfig, evaluate, model_spec, train
from ctcot.synth import SynthConfig, generate

RUNS = [
    ("ctc", "interpolate"),
    ("ctc+ot", "interpolate"),
    ("ctc+euclidean", "average"),
    ("ctc+euclidean", "interpolate"),
    ("ctc+euclidean", "attention"),
    ("ctc+kl", "average"),
    ("ctc+kl", "interpolate"),
    ("ctc+kl", "attention"),
    ("ctc+adversarial", "interpolate"),
    ("ctc+softdtw", "interpolate"),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sc = SynthConfig()
    tr, ev = generate(sc, "train"), generate(sc, "eval")
    for kind, match in RUNS:
        cfg = TrainConfig(loss_kind=kind, length_match=match, epochs=args.epochs, seed=args.seed)
        spec = model_spec(cfg, sc.vocab, sc.frame_dim)
        params, history = train(tr, cfg, spec)
        last = history[-1]
        rep = evaluate(params, ev, cfg, spec)
        print(json.dumps({"kind": kind, "match": match, "ctc_loss": last["ctc_loss"], "aux_loss": last["aux_loss"], **rep}))


if __name__ == "__main__":
    main()

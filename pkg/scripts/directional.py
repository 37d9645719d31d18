#!/usr/bin/env python3
"""Train ctc, ctc+ot (gamma=1) and ctc+ot (gamma=0) on the default synthetic
set for several seeds and print the eval reports as JSON lines."""

import argparse
import json
import time

from ctcot.ot import OtConfig
from ctcot.siamese import TrainConfig, evaluate, model_spec, train
from ctcot.synth import SynthConfig, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    sc = SynthConfig()
    tr, ev = generate(sc, "train"), generate(sc, "eval")
    variants = {
        "ctc": dict(loss_kind="ctc"),
        "ctc+ot": dict(loss_kind="ctc+ot"),
        "ctc+ot,gamma=0": dict(loss_kind="ctc+ot", ot=OtConfig(gamma=0.0)),
    }
    for seed in args.seeds:
        for name, kw in variants.items():
            cfg = TrainConfig(epochs=args.epochs, seed=seed, **kw)
            spec = model_spec(cfg, sc.vocab, sc.frame_dim)
            t0 = time.perf_counter()
            params, _ = train(tr, cfg, spec)
            rep = evaluate(params, ev, cfg, spec)
            rep.update(seed=seed, variant=name, seconds=round(time.perf_counter() - t0, 1))
            print(json.dumps(rep), flush=True)


if __name__ == "__main__":
    main()

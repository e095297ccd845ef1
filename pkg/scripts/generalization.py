"""Held-out comparison of the fused and FC-only heads on synthetic data.

    python3 scripts/generalization.py --train 128 --val 64 --seeds 0 1 2
"""
import argparse
import dataclasses
import tempfile
import time

from ctnet.config import PRESETS
from ctnet.synth import SynthSpec, generate_synthetic_dataset
from ctnet.train import evaluate, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--train", type=int, default=128)
    ap.add_argument("--val", type=int, default=64)
    ap.add_argument("--data-seed", type=int, default=100)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epochs", type=int, default=200)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as d:
        tr = generate_synthetic_dataset(SynthSpec(n_cases=args.train, seed=args.data_seed), f"{d}/train")
        va = generate_synthetic_dataset(SynthSpec(n_cases=args.val, seed=args.data_seed + 100),
                                        f"{d}/val", split="val")
        print("seed,fused_f1,fc_f1,train_s")
        for seed in args.seeds:
            cfg = dataclasses.replace(PRESETS["desk"], seed=seed, epochs=args.epochs,
                              step_epochs=tuple(s for s in PRESETS["desk"].step_epochs if s < args.epochs))
            t0 = time.perf_counter()
            params, _ = train(tr, cfg)
            elapsed = time.perf_counter() - t0
            model = (cfg.model, params)
            fused, fc = evaluate(model, va, "fused"), evaluate(model, va, "fc")
            print(f"{seed},{fused.macro_f1:.4f},{fc.macro_f1:.4f},{elapsed:.0f}", flush=True)


if __name__ == "__main__":
    main()

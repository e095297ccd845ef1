"""Train the desk preset on a small synthetic set and report how fast it memorizes it.

    python3 scripts/overfit.py --cases 32 --data-seed 0 --seed 0
"""
import argparse
import dataclasses
import tempfile
import time

from ctnet.config import PRESETS
from ctnet.synth import SynthSpec, generate_synthetic_dataset
from ctnet.train import train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cases", type=int, default=32)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=200)
    args = ap.parse_args()

    cfg = dataclasses.replace(PRESETS["desk"], seed=args.seed, epochs=args.epochs,
                              step_epochs=tuple(s for s in PRESETS["desk"].step_epochs if s < args.epochs))
    with tempfile.TemporaryDirectory() as d:
        m = generate_synthetic_dataset(SynthSpec(n_cases=args.cases, seed=args.data_seed), d)
        t0 = time.perf_counter()
        _, logs = train(m, cfg, on_epoch=lambda e: e.epoch % 10 == 9 and print(e.line(), flush=True))
    first = next((e.epoch for e in logs if e.train_macro_f1 >= 0.95), None)
    print(f"best train F1 {max(e.train_macro_f1 for e in logs):.4f}; first >= 0.95 at epoch {first}; "
          f"{time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()

"""Inference latency for a randomly initialized model at a chosen preset.

Numbers are specific to the machine; there is no pass threshold.

    python3 scripts/bench.py --preset full --depth 60 --repeats 5
"""
import argparse
import json

import numpy as np

from ctnet.config import PRESETS
from ctnet.model import build_model, parameter_count
from ctnet.rng import Rng
from ctnet.train import benchmark_inference
from ctnet.volume import Volume


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--preset", choices=sorted(PRESETS), default="full")
    ap.add_argument("--depth", type=int, default=60)
    ap.add_argument("--side", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--mode", choices=("fc", "fused"), default="fused")
    args = ap.parse_args()

    cfg = PRESETS[args.preset].model
    params = build_model(cfg, Rng(0))
    vol = Volume((np.random.default_rng(0).random((args.depth, args.side, args.side)) * 255).astype(np.uint8))
    stats = benchmark_inference((cfg, params), vol, repeats=args.repeats, mode=args.mode)
    print(json.dumps({"preset": args.preset, "params": parameter_count(params), **stats}, indent=2))


if __name__ == "__main__":
    main()

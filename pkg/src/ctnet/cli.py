"""Command-line entry point: ``ctnet {synth,resample,train,eval,infer,bench}``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 non-finite
numbers detected. Machine-readable output goes to stdout, logs to stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import PRESETS
from .errors import DataError, NonFiniteError
from .io import load_manifest, load_volume, save_volume
from .resampling import apply_plan, plan_indexes, resize_bilinear, standardize
from .rng import Rng
from .synth import SynthSpec, generate_synthetic_dataset
from .train import benchmark_inference, evaluate, infer_volume, train
from .volume import Volume

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("ctnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _cmd_synth(a):
    base = SynthSpec()
    spec = SynthSpec(
        n_cases=a.cases, positive_fraction=a.pos_frac, seed=a.seed,
        depth_range=(a.depth_min or base.depth_range[0], a.depth_max or base.depth_range[1]),
        slice_size=a.size or base.slice_size,
    )
    m = generate_synthetic_dataset(spec, a.out)
    n_pos = sum(r.label == "COVID-19" for r in m.records)
    print(json.dumps({"manifest": str(Path(a.out) / "manifest.csv"), "cases": len(m),
                      "positive": n_pos, "negative": len(m) - n_pos}))


def _cmd_resample(a):
    vol = load_volume(a.input)
    plan = plan_indexes(vol.depth, a.renum_ct, Rng(a.seed))
    stack = resize_bilinear(apply_plan(vol, plan), a.size)
    data = stack.astype(np.float32) if a.no_standardize else standardize(stack).data
    save_volume(Volume(data), a.out)
    print(json.dumps({"out": str(a.out), "branch": plan.branch,
                      "indexes": [int(i) for i in plan.indexes], "shape": list(data.shape)}))


def _cmd_train(a):
    cfg = PRESETS[a.preset]
    overrides = {"seed": a.seed}
    if a.epochs is not None:
        steps = tuple(s for s in cfg.step_epochs if s < a.epochs)
        overrides.update(epochs=a.epochs, step_epochs=steps)
    if a.lr is not None:
        overrides["lr"] = a.lr
    if a.batch is not None:
        overrides["batch_size"] = a.batch
    cfg = dataclasses.replace(cfg, **overrides)
    manifest = load_manifest(a.manifest, split="train")
    log_path = a.log or f"{a.out}.log"
    train(manifest, cfg, a.out, log_path, on_epoch=lambda e: print(e.line(), flush=True))


def _cmd_eval(a):
    manifest = load_manifest(a.manifest, split="val")
    report = evaluate(load_checkpoint(a.ckpt), manifest, a.mode)
    text = report.to_json()
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _cmd_infer(a):
    pred = infer_volume(load_checkpoint(a.ckpt), load_volume(a.volume), a.mode)
    print(json.dumps({"label": pred.label, "probabilities": list(pred.probabilities), "mode": pred.mode}))


def _cmd_bench(a):
    stats = benchmark_inference(load_checkpoint(a.ckpt), load_volume(a.volume), a.repeats, a.mode)
    print(json.dumps(stats))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctnet", description="CTNet slice resampling, training and evaluation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic CT dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--cases", type=int, required=True)
    s.add_argument("--pos-frac", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--depth-min", type=int)
    s.add_argument("--depth-max", type=int)
    s.add_argument("--size", type=int)
    s.set_defaults(fn=_cmd_synth)

    s = sub.add_parser("resample", help="resample, resize and standardize one volume")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--renum-ct", type=int, required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--no-standardize", action="store_true",
                   help="keep resized intensities instead of per-volume standardization")
    s.set_defaults(fn=_cmd_resample)

    s = sub.add_parser("train", help="train from scratch and write a checkpoint")
    s.add_argument("--manifest", required=True)
    s.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch", type=int)
    s.add_argument("--log", help="epoch log path (default: OUT.log)")
    s.set_defaults(fn=_cmd_train)

    s = sub.add_parser("eval", help="macro-F1 report for a labeled manifest")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--mode", choices=("fc", "fused"), default="fused")
    s.add_argument("--out")
    s.set_defaults(fn=_cmd_eval)

    s = sub.add_parser("infer", help="predict one volume")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--volume", required=True)
    s.add_argument("--mode", choices=("fc", "fused"), default="fused")
    s.set_defaults(fn=_cmd_infer)

    s = sub.add_parser("bench", help="time preprocessing + inference on one volume")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--volume", required=True)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--mode", choices=("fc", "fused"), default="fused")
    s.set_defaults(fn=_cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except NonFiniteError as e:
        print(f"ctnet: numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as e:
        print(f"ctnet: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"ctnet: invalid argument: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

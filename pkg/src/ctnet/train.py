"""Training loop (SGD with momentum, step learning-rate decay), evaluation
and inference timing."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import autograd as ag
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig
from .errors import MissingLabelError
from .io import DatasetManifest, load_volume
from .metrics import MetricsReport, macro_f1, confusion_matrix
from .model import Prediction, build_model, forward
from .resampling import ModelInput, plan_indexes, preprocess
from .rng import Rng, hash64
from .volume import Volume

log = logging.getLogger(__name__)

EVAL_SEED = 0xC7
EVAL_BATCH = 8


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    drops = sum(1 for s in cfg.step_epochs if s <= epoch)
    return cfg.lr * cfg.lr_decay ** drops


def sgd_step(params: dict, lr: float, momentum: float, velocity: dict) -> None:
    """v <- momentum * v + grad; theta <- theta - lr * v; grads cleared.

    ``velocity`` maps parameter names to buffers and is updated in place.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    for name, p in params.items():
        v = velocity.get(name)
        v = p.grad.copy() if v is None else momentum * v + p.grad
        velocity[name] = v.astype(p.dtype, copy=False)
        p.value = (p.value - lr * velocity[name]).astype(p.dtype, copy=False)
        p.grad = None


class CaseLoader:
    """Loads and preprocesses manifest cases, caching anything that does not
    depend on the random stream."""

    def __init__(self, manifest: DatasetManifest, cfg: ModelConfig):
        self.manifest = manifest
        self.cfg = cfg
        self._volumes: dict[str, Volume] = {}
        self._fixed: dict[str, ModelInput] = {}

    def volume(self, idx: int) -> Volume:
        rec = self.manifest.records[idx]
        if rec.case_id not in self._volumes:
            self._volumes[rec.case_id] = load_volume(self.manifest.resolve(rec))
        return self._volumes[rec.case_id]

    def input(self, idx: int, rng_seed: int) -> np.ndarray:
        rec = self.manifest.records[idx]
        if rec.case_id in self._fixed:
            return self._fixed[rec.case_id].data
        vol = self.volume(idx)
        plan = plan_indexes(vol.depth, self.cfg.renum_ct, Rng(rng_seed))
        mi = preprocess(vol, self.cfg.renum_ct, self.cfg.image_size, plan=plan)
        if plan.branch == "uniform":
            self._fixed[rec.case_id] = mi
        return mi.data

    def batch(self, idxs: Iterable[int], seed_fn: Callable[[str], int]) -> np.ndarray:
        return np.stack([self.input(i, seed_fn(self.manifest.records[i].case_id)) for i in idxs])


@dataclass
class EpochLog:
    epoch: int
    loss: float
    lr: float
    train_macro_f1: float

    def line(self) -> str:
        return f"{self.epoch},{self.loss:.6f},{self.lr:.6g},{self.train_macro_f1:.6f}"


def train(manifest: DatasetManifest, cfg: TrainConfig, out_checkpoint=None,
          log_path=None, on_epoch: Callable[[EpochLog], None] | None = None):
    """Train from scratch; returns ``(params, epoch_logs)``.

    The checkpoint and the ``epoch,loss,lr,train_macro_f1`` log are written
    when paths are given.
    """
    for rec in manifest.records:
        if rec.label is None:
            raise MissingLabelError(f"training case {rec.case_id} has no label")
    mcfg = cfg.model
    params = build_model(mcfg, Rng(hash64(cfg.seed, "init")))
    labels = manifest.labels()
    loader = CaseLoader(manifest, mcfg)
    velocity: dict = {}
    logs = []
    n = len(manifest)
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        order = Rng(hash64(cfg.seed, "shuffle", epoch)).permutation(n)
        total, preds = 0.0, np.empty(n, dtype=np.int64)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = loader.batch(idx, lambda cid: hash64(cfg.seed, cid, epoch))
            out = forward(x, params, mcfg, "fused")
            loss = ag.cross_entropy(out.logits, labels[idx])
            ag.backward(loss)
            sgd_step(params, lr, cfg.momentum, velocity)
            total += float(loss.value) * len(idx)
            preds[idx] = np.argmax(out.logits.value, axis=1)
        f1, _ = macro_f1(confusion_matrix(labels, preds))
        entry = EpochLog(epoch, total / n, lr, f1)
        logs.append(entry)
        log.info("epoch %s", entry.line())
        if on_epoch is not None:
            on_epoch(entry)
    if out_checkpoint is not None:
        save_checkpoint(out_checkpoint, mcfg, params)
    if log_path is not None:
        Path(log_path).write_text("".join(e.line() + "\n" for e in logs), encoding="utf-8")
    return params, logs


def _resolve_model(checkpoint):
    if isinstance(checkpoint, (str, Path)):
        return load_checkpoint(checkpoint)
    return checkpoint


def predict(checkpoint, manifest: DatasetManifest, mode: str) -> list[Prediction]:
    """Predictions for every case, using the fixed evaluation seed for any
    volume that needs oversampling."""
    cfg, params = _resolve_model(checkpoint)
    loader = CaseLoader(manifest, cfg)
    preds: list[Prediction] = []
    with ag.no_grad():
        for start in range(0, len(manifest), EVAL_BATCH):
            idx = range(start, min(start + EVAL_BATCH, len(manifest)))
            out = forward(loader.batch(idx, lambda cid: EVAL_SEED), params, cfg, mode)
            preds.extend(out.predictions(mode))
    return preds


def evaluate(checkpoint, manifest: DatasetManifest, mode: str = "fused") -> MetricsReport:
    y_true = manifest.labels()
    y_pred = [p.class_index for p in predict(checkpoint, manifest, mode)]
    return MetricsReport.from_predictions(y_true, y_pred, mode)


def infer_volume(checkpoint, volume: Volume, mode: str = "fused") -> Prediction:
    cfg, params = _resolve_model(checkpoint)
    mi = preprocess(volume, cfg.renum_ct, cfg.image_size, Rng(EVAL_SEED))
    with ag.no_grad():
        return forward(mi.data[None], params, cfg, mode).predictions(mode)[0]


def benchmark_inference(checkpoint, volume: Volume, repeats: int = 5, mode: str = "fused") -> dict:
    """Wall time of preprocess + forward for one case, after one warmup run."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    model = _resolve_model(checkpoint)
    infer_volume(model, volume, mode)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        infer_volume(model, volume, mode)
        times.append((time.perf_counter() - t0) * 1e3)
    t = np.asarray(times)
    return {"mean": float(t.mean()), "p50": float(np.percentile(t, 50)),
            "p95": float(np.percentile(t, 95)), "n": int(repeats)}

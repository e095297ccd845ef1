"""Slice resampling and per-volume preprocessing.

A volume of ``totalnum`` slices becomes a fixed stack of ``renum_ct``
slices. With enough slices the picks are evenly spaced at
``diff = totalnum / (renum_ct + 1)``, taking ``floor(i * diff)`` in double
precision for ``i = 0 .. renum_ct - 1``. Shorter volumes are oversampled
by drawing ``renum_ct`` slices uniformly with replacement and sorting them
so the channel axis keeps anatomical order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .rng import Rng
from .volume import Volume

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class SamplePlan:
    indexes: np.ndarray
    renum_ct: int
    source_depth: int
    branch: str  # "uniform" | "oversample"


@dataclass
class ModelInput:
    """Standardized ``[renum_ct, size, size]`` float32 stack."""

    data: np.ndarray

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def plan_indexes(totalnum: int, renum_ct: int, rng: Rng | None = None) -> SamplePlan:
    if totalnum < 1 or renum_ct < 1:
        raise ValueError(f"totalnum and renum_ct must be >= 1, got {totalnum}, {renum_ct}")
    if totalnum >= renum_ct:
        diff = totalnum / (renum_ct + 1)
        idx = np.floor(np.arange(renum_ct) * diff).astype(np.int64)
        return SamplePlan(idx, renum_ct, totalnum, "uniform")
    if rng is None:
        raise ValueError("oversampling (totalnum < renum_ct) needs an Rng")
    idx = np.sort(rng.integers(totalnum, size=renum_ct))
    return SamplePlan(idx, renum_ct, totalnum, "oversample")


def apply_plan(volume: Volume, plan: SamplePlan) -> np.ndarray:
    if plan.source_depth != volume.depth:
        raise ShapeError(f"plan built for depth {plan.source_depth}, volume has depth {volume.depth}")
    return volume.voxels[plan.indexes].copy()


def _axis_weights(n_src: int, n_dst: int):
    if n_dst == 1 or n_src == 1:
        pos = np.zeros(n_dst)
    else:
        pos = np.arange(n_dst) * (n_src - 1) / (n_dst - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_src - 1)
    return lo, hi, pos - lo


def resize_bilinear(image: np.ndarray, size: int) -> np.ndarray:
    """Align-corners bilinear resize of the last two axes to ``size x size``.

    Output pixel ``d`` samples source coordinate ``d * (n - 1) / (size - 1)``
    so the four corners are copied exactly. Works on a single slice or a
    stack; computes in float64.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[-2:]
    if (h, w) == (size, size):
        return img.copy()
    y0, y1, wy = _axis_weights(h, size)
    x0, x1, wx = _axis_weights(w, size)
    rows = img[..., y0, :] * (1 - wy)[:, None] + img[..., y1, :] * wy[:, None]
    return rows[..., x0] * (1 - wx) + rows[..., x1] * wx


def standardize(stack: np.ndarray) -> ModelInput:
    """Per-volume zero mean / unit std (std clamped below at 1e-6)."""
    s = np.asarray(stack, dtype=np.float64)
    mu = s.mean()
    sd = max(s.std(), STD_FLOOR)
    return ModelInput(((s - mu) / sd).astype(np.float32))


def preprocess(volume: Volume, renum_ct: int, size: int, rng: Rng | None = None,
               plan: SamplePlan | None = None) -> ModelInput:
    """Resample, resize and standardize one volume into a model input."""
    if plan is None:
        plan = plan_indexes(volume.depth, renum_ct, rng)
    return standardize(resize_bilinear(apply_plan(volume, plan), size))

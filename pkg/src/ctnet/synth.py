"""Synthetic CT-like volumes for desk-scale training and tests.

Every volume has a bright elliptical body with two darker lung fields whose
size varies smoothly along depth. Positive cases add one or more bright
spheroidal lesions restricted to the lungs; each lesion covers a run of at
least ``min_slab_thickness`` consecutive slices. Intensities are float32 in
[0, 1]. Everything is a pure function of the spec and its seed.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .io import CaseRecord, DatasetManifest, save_manifest, save_volume
from .model import CLASS_NAMES
from .rng import Rng, hash64
from .volume import Volume

BODY_LEVEL = 0.55
LUNG_LEVEL = 0.15


@dataclass(frozen=True)
class LesionSpec:
    count_range: tuple[int, int] = (1, 3)
    radius_range: tuple[float, float] = (3.0, 6.0)
    intensity_delta: float = 0.4
    min_slab_thickness: int = 8


@dataclass(frozen=True)
class SynthSpec:
    n_cases: int = 32
    positive_fraction: float = 0.5
    depth_range: tuple[int, int] = (16, 48)
    slice_size: int = 32
    lesion: LesionSpec = field(default_factory=LesionSpec)
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.depth_range
        if not 1 <= lo <= hi <= 1000:
            raise ConfigError(f"depth_range {self.depth_range} must lie within [1, 1000]")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ConfigError("positive_fraction must lie in [0, 1]")
        if self.n_cases < 1 or self.slice_size < 8:
            raise ConfigError("need n_cases >= 1 and slice_size >= 8")
        if self.lesion.min_slab_thickness > lo:
            raise ConfigError("min_slab_thickness cannot exceed the smallest depth")


@dataclass
class SynthCase:
    volume: Volume
    label: str
    lesions: list[dict]
    lesion_mask: np.ndarray
    lung_mask: np.ndarray


def _ellipse(yy, xx, cy, cx, ay, ax):
    return ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0


def case_labels(spec: SynthSpec) -> list[str]:
    n_pos = int(round(spec.n_cases * spec.positive_fraction))
    order = Rng(hash64(spec.seed, "labels")).permutation(spec.n_cases)
    labels = [CLASS_NAMES[1]] * spec.n_cases
    for i in order[:n_pos]:
        labels[int(i)] = CLASS_NAMES[0]
    return labels


def render_case(spec: SynthSpec, index: int, label: str) -> SynthCase:
    rng = Rng(hash64(spec.seed, "case", index))
    s = spec.slice_size
    depth = spec.depth_range[0] + rng.integers(spec.depth_range[1] - spec.depth_range[0] + 1)
    zz, yy, xx = np.meshgrid(np.arange(depth), np.arange(s), np.arange(s), indexing="ij")
    cy = s / 2 + rng.uniform(-0.04, 0.04) * s
    cx = s / 2 + rng.uniform(-0.04, 0.04) * s
    body = _ellipse(yy, xx, cy, cx, 0.42 * s, 0.46 * s)
    scale = 0.75 + 0.25 * np.sin(np.pi * (zz + 0.5) / depth)
    lung_ay, lung_ax, lung_dx = 0.30 * s, 0.15 * s, 0.21 * s
    lungs = [(cy, cx - lung_dx), (cy, cx + lung_dx)]
    lung = np.zeros_like(body)
    for ly, lx in lungs:
        lung |= _ellipse(yy, xx, ly, lx, lung_ay * scale, lung_ax * scale)
    # soft vertical gradient on the body
    vol = np.where(body, BODY_LEVEL + 0.05 * (yy - cy) / s, 0.0)
    vol = np.where(lung, LUNG_LEVEL, vol)

    lesions, mask = [], np.zeros_like(body)
    if label == CLASS_NAMES[0]:
        ls = spec.lesion
        count = ls.count_range[0] + rng.integers(ls.count_range[1] - ls.count_range[0] + 1)
        for _ in range(count):
            thick = min(depth, ls.min_slab_thickness + rng.integers(5))
            z0 = rng.integers(depth - thick + 1)
            zc, rz = z0 + (thick - 1) / 2, thick / 2
            ly, lx = lungs[rng.integers(2)]
            # inside the inner half of the lung at its narrowest
            ry, rx = 0.5 * 0.75 * lung_ay, 0.5 * 0.75 * lung_ax
            ang = rng.uniform(0, 2 * np.pi)
            rad = np.sqrt(rng.random())
            py, px = ly + ry * rad * np.sin(ang), lx + rx * rad * np.cos(ang)
            r = rng.uniform(*ls.radius_range)
            blob = ((zz - zc) / rz) ** 2 + ((yy - py) / r) ** 2 + ((xx - px) / r) ** 2 <= 1.0
            mask |= blob & lung
            lesions.append({"z0": int(z0), "thickness": int(thick), "center": [float(zc), float(py), float(px)],
                            "radius": float(r)})
        vol = vol + ls.intensity_delta * mask
    vol = vol + spec.noise_std * rng.normal(vol.shape)
    vol = np.clip(vol, 0.0, 1.0).astype(np.float32)
    return SynthCase(Volume(vol, intensity_range=(0.0, 1.0)), label, lesions, mask, lung)


def generate_synthetic_dataset(spec: SynthSpec, out_dir, split: str = "train") -> DatasetManifest:
    """Write ``volumes/case_NNNN.vol``, ``manifest.csv`` and ``lesions.json``."""
    out = Path(out_dir)
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    records, log = [], {}
    for i, label in enumerate(case_labels(spec)):
        case = render_case(spec, i, label)
        cid = f"case_{i:04d}"
        rel = Path("volumes") / f"{cid}.vol"
        save_volume(case.volume, out / rel)
        records.append(CaseRecord(cid, rel, label))
        log[cid] = case.lesions
    manifest = DatasetManifest(records, split, out)
    save_manifest(manifest, out / "manifest.csv")
    meta = {"spec": asdict(spec), "lesions": log}
    (out / "lesions.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest

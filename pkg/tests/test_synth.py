import json

import numpy as np
import pytest

from ctnet.errors import ConfigError
from ctnet.io import load_volume
from ctnet.synth import LesionSpec, SynthSpec, case_labels, generate_synthetic_dataset, render_case


def test_label_balance():
    labels = case_labels(SynthSpec(n_cases=32, positive_fraction=0.5, seed=1))
    assert labels.count("COVID-19") == 16 and labels.count("Non-COVID-19") == 16


def test_same_seed_byte_identical(tmp_path):
    spec = SynthSpec(n_cases=4, seed=3)
    generate_synthetic_dataset(spec, tmp_path / "a")
    generate_synthetic_dataset(spec, tmp_path / "b")
    for sub in ("manifest.csv", "lesions.json", *[f"volumes/case_{i:04d}.vol" for i in range(4)]):
        assert (tmp_path / "a" / sub).read_bytes() == (tmp_path / "b" / sub).read_bytes()


def test_manifest_points_at_volumes(tmp_path):
    m = generate_synthetic_dataset(SynthSpec(n_cases=3, seed=0), tmp_path)
    for r in m.records:
        v = load_volume(m.resolve(r))
        assert v.voxels.dtype == np.float32 and 0 <= v.voxels.min() and v.voxels.max() <= 1


def test_lesion_contrast_oracle():
    spec = SynthSpec(n_cases=12, seed=5)
    delta = spec.lesion.intensity_delta
    for i, label in enumerate(case_labels(spec)):
        case = render_case(spec, i, label)
        if label != "COVID-19":
            assert not case.lesion_mask.any()
            continue
        vox = case.volume.voxels
        lesion = vox[case.lesion_mask].mean()
        background = vox[case.lung_mask & ~case.lesion_mask].mean()
        assert lesion - background >= delta / 2


def test_every_positive_has_a_contiguous_slab(tmp_path):
    spec = SynthSpec(n_cases=16, seed=7)
    generate_synthetic_dataset(spec, tmp_path)
    log = json.loads((tmp_path / "lesions.json").read_text())["lesions"]
    labels = case_labels(spec)
    for i, label in enumerate(labels):
        entries = log[f"case_{i:04d}"]
        if label != "COVID-19":
            assert entries == []
            continue
        case = render_case(spec, i, label)
        assert entries == case.lesions
        hit = case.lesion_mask.any(axis=(1, 2))
        longest, run = 0, 0
        for h in hit:
            run = run + 1 if h else 0
            longest = max(longest, run)
        assert longest >= spec.lesion.min_slab_thickness
        for e in entries:
            assert e["thickness"] >= spec.lesion.min_slab_thickness
            assert hit[e["z0"]:e["z0"] + e["thickness"]].all()


def test_spec_validation():
    with pytest.raises(ConfigError):
        SynthSpec(depth_range=(0, 10))
    with pytest.raises(ConfigError):
        SynthSpec(positive_fraction=1.5)
    with pytest.raises(ConfigError):
        SynthSpec(depth_range=(4, 10), lesion=LesionSpec(min_slab_thickness=8))

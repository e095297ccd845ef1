import dataclasses

import numpy as np
import pytest

from ctnet import autograd as ag
from ctnet.autograd import Variable
from ctnet.config import PRESETS, TINY_MODEL, ModelConfig, TrainConfig
from ctnet.errors import ConfigError, MissingLabelError
from ctnet.io import CaseRecord, DatasetManifest, load_manifest, load_volume
from ctnet.model import build_model, forward
from ctnet.resampling import preprocess
from ctnet.rng import Rng
from ctnet.synth import SynthSpec, generate_synthetic_dataset
from ctnet.train import benchmark_inference, evaluate, lr_at_epoch, sgd_step, train

SMALL_MODEL = ModelConfig(renum_ct=4, image_size=16, stage_channels=(4, 8), se_reduction=2, tokens=2, heads=2)


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    generate_synthetic_dataset(SynthSpec(n_cases=8, seed=2, slice_size=16, depth_range=(8, 20)), d)
    return load_manifest(d / "manifest.csv")


def test_lr_schedule_full():
    cfg = PRESETS["full"]
    assert lr_at_epoch(cfg, 0) == 0.01
    assert lr_at_epoch(cfg, 49) == 0.01
    assert lr_at_epoch(cfg, 50) == pytest.approx(0.001, rel=1e-12)
    assert lr_at_epoch(cfg, 100) == pytest.approx(0.0001, rel=1e-12)
    lrs = [lr_at_epoch(cfg, e) for e in range(cfg.epochs)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ValueError):
        lr_at_epoch(cfg, 120)


def test_train_config_invariants():
    with pytest.raises(ConfigError):
        TrainConfig(step_epochs=(100, 50))
    with pytest.raises(ConfigError):
        TrainConfig(epochs=100, step_epochs=(50, 100))
    with pytest.raises(ConfigError):
        TrainConfig(lr_decay=0.0)


def _quadratic_step(theta, lr, momentum, velocity):
    p = {"t": Variable(np.array([theta]), requires_grad=True)}
    ag.backward(ag.sum_(ag.mul(p["t"], p["t"])))
    sgd_step(p, lr, momentum, velocity)
    assert p["t"].grad is None
    return float(p["t"].value[0])


def test_sgd_plain_step():
    assert _quadratic_step(3.0, 0.1, 0.0, {}) == pytest.approx(2.4, abs=1e-15)


def test_sgd_momentum_two_steps():
    v = {}
    t1 = _quadratic_step(3.0, 0.1, 0.9, v)
    t2 = _quadratic_step(t1, 0.1, 0.9, v)
    # v1 = 6, t1 = 2.4; g1 = 4.8, v2 = 0.9*6 + 4.8 = 10.2, t2 = 2.4 - 1.02
    assert t1 == pytest.approx(2.4, abs=1e-15)
    assert t2 == pytest.approx(1.38, abs=1e-14)


def test_sgd_zero_lr_and_missing_grad():
    p = {"t": Variable(np.array([3.0]), requires_grad=True)}
    assert _quadratic_step(3.0, 0.0, 0.9, {}) == 3.0
    with pytest.raises(ValueError):
        sgd_step(p, 0.1, 0.0, {})


def test_initial_loss_near_ln2(tmp_path):
    m = generate_synthetic_dataset(SynthSpec(n_cases=8, seed=4), tmp_path)
    cfg = PRESETS["desk"].model
    x = np.stack([preprocess(load_volume(m.resolve(r)),
                             cfg.renum_ct, cfg.image_size).data for r in m.records])
    for seed in range(3):
        p = build_model(cfg, Rng(seed))
        loss = float(ag.cross_entropy(forward(x, p, cfg).logits, m.labels()).value)
        assert abs(loss - np.log(2)) < 0.2


def test_training_is_deterministic(tmp_path, small_data):
    cfg = TrainConfig(model=SMALL_MODEL, epochs=3, step_epochs=(2,), batch_size=4, seed=5)
    _, la = train(small_data, cfg, tmp_path / "a.ckpt", tmp_path / "a.log")
    _, lb = train(small_data, cfg, tmp_path / "b.ckpt", tmp_path / "b.log")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    lines = (tmp_path / "a.log").read_text().splitlines()
    assert lines == (tmp_path / "b.log").read_text().splitlines()
    assert len(lines) == 3
    epoch, loss, lr, f1 = lines[2].split(",")
    assert epoch == "2" and float(lr) == pytest.approx(0.001) and 0 <= float(f1) <= 1


def test_train_rejects_unlabeled(tmp_path, small_data):
    recs = [CaseRecord(r.case_id, small_data.resolve(r), None) for r in small_data.records]
    m = DatasetManifest(recs, "test")
    with pytest.raises(MissingLabelError):
        train(m, TrainConfig(model=SMALL_MODEL, epochs=1, step_epochs=()))


def test_evaluate_modes_and_determinism(tmp_path, small_data):
    params = build_model(SMALL_MODEL, Rng(3))
    a = evaluate((SMALL_MODEL, params), small_data, "fused").to_json()
    assert a == evaluate((SMALL_MODEL, params), small_data, "fused").to_json()
    fc = evaluate((SMALL_MODEL, params), small_data, "fc")
    assert fc.mode == "fc" and sum(map(sum, fc.confusion)) == len(small_data)
    for name in ("transformer.head.weight", "transformer.head.bias"):
        params[name].value[:] = 0
    fused = evaluate((SMALL_MODEL, params), small_data, "fused").to_dict()
    fc = evaluate((SMALL_MODEL, params), small_data, "fc").to_dict()
    fused.pop("mode"), fc.pop("mode")
    assert fused == fc


def test_evaluate_oversampled_case_is_stable(tmp_path):
    m = generate_synthetic_dataset(SynthSpec(n_cases=2, seed=1, slice_size=16, depth_range=(2, 3),
                                             lesion=dataclasses.replace(SynthSpec().lesion, min_slab_thickness=2)),
                                   tmp_path)
    model = (SMALL_MODEL, build_model(SMALL_MODEL, Rng(0)))
    assert evaluate(model, m).to_json() == evaluate(model, m).to_json()


def test_benchmark_reports_order_statistics(small_data):
    model = (TINY_MODEL, build_model(TINY_MODEL, Rng(0)))
    stats = benchmark_inference(model, load_volume(small_data.resolve(small_data.records[0])), repeats=5)
    assert stats["n"] == 5 and 0 < stats["p50"] <= stats["p95"]
    assert stats["mean"] > 0
    with pytest.raises(ValueError):
        benchmark_inference(model, load_volume(small_data.resolve(small_data.records[0])), repeats=0)

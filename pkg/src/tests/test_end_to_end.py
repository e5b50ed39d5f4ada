# src/tests/test_end_to_end.py
import os
import time

import pytest

from src.config import desk_preset
from src.data.dataset import load_dataset, load_manifest
from src.data.synthetic import synth_generate
from src.evaluation.metrics import evaluate_samples
from src.training.trainer import run_training

pytestmark = pytest.mark.slow


@pytest.mark.skipif(os.getenv("DGAN_RUN_SLOW") != "1", reason="set DGAN_RUN_SLOW=1 for the desk-scale run")
def test_desk_run_learns(tmp_path):
    data = str(tmp_path / "synth")
    synth_generate(36, 32, seed=0, out_dir=data)
    dataset = load_dataset(load_manifest(os.path.join(data, "manifest.csv")), 32)
    config = desk_preset(resolution=32, gan_epochs=10, classifier_epochs=3, decay_start=5, checkpoint_every=5)
    result = run_training(config, dataset, str(tmp_path / "run"))

    assert result.summary["held_out_l1_reduction"] > 0
    report = evaluate_samples(result.bundle, dataset.held_out(), "model", "held_out", seed=0)
    assert report.is_finite()
    baseline = evaluate_samples(result.bundle, dataset.held_out(), "identity", "held_out", seed=0)
    assert baseline.is_finite()


DESK_PAIRS = 450
DESK_BUDGET_S = 30 * 60


@pytest.mark.skipif(os.getenv("DGAN_RUN_SLOW") != "1", reason="set DGAN_RUN_SLOW=1 for the desk-scale run")
def test_desk_preset_acceptance(tmp_path):
    data = str(tmp_path / "synth")
    synth_generate(DESK_PAIRS, 64, seed=0, out_dir=data)
    config = desk_preset()
    dataset = load_dataset(load_manifest(os.path.join(data, "manifest.csv")), config.resolution)

    started = time.perf_counter()
    result = run_training(config, dataset, str(tmp_path / "run"))
    elapsed = time.perf_counter() - started

    test = evaluate_samples(result.bundle, dataset.split("test"), "model", "test", seed=0, with_attention=False)
    held_out = dataset.held_out()
    model = evaluate_samples(result.bundle, held_out, "model", "held_out", seed=0,
                             gradcam_layer=config.gradcam_layer)
    identity = evaluate_samples(result.bundle, held_out, "identity", "held_out", seed=0, with_attention=False)

    assert test.accuracy >= 0.9
    assert result.summary["held_out_l1_reduction"] >= 0.5
    assert model.roi_fid < identity.roi_fid
    assert model.attention_roi_hit_rate is not None and model.attention_roi_hit_rate >= 0.7
    assert elapsed < DESK_BUDGET_S, f"desk preset took {elapsed:.0f}s"

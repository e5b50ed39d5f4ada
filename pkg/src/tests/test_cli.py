# src/tests/test_cli.py
import os

import numpy as np
import pandas as pd
import pytest
from PIL import Image

from src.cli import main
from src.networks.checkpoint import bundle_from_config, save_checkpoint
from src.training.orchestrator import INFERENCE_ARTIFACTS


@pytest.fixture
def checkpoint(tmp_path, tiny_config):
    bundle = bundle_from_config(tiny_config)
    bundle.metadata["config"] = tiny_config.model_dump()
    path = str(tmp_path / "model_final.dgan")
    save_checkpoint(bundle, path)
    return path


def _png(path, size):
    pixels = np.random.default_rng(0).integers(0, 256, (size, size, 3), dtype=np.uint8)
    Image.fromarray(pixels).save(path)
    return str(path)


def test_synth_data(tmp_path, capsys):
    out = str(tmp_path / "synth")
    assert main(["synth-data", "--out", out, "--n", "18", "--resolution", "16"]) == 0
    assert os.path.exists(os.path.join(out, "manifest.csv"))
    printed = capsys.readouterr().out
    assert "resolved_seed=0" in printed
    assert "total" in printed


def test_gradcheck_primitives(capsys):
    assert main(["gradcheck", "--points", "1", "--no-networks"]) == 0
    assert "gradient checks passed" in capsys.readouterr().out


def test_missing_config_is_exit_2(tmp_path, synth_manifest_path, capsys):
    code = main(["train", "--config", str(tmp_path / "missing.cfg"), "--data", synth_manifest_path,
                 "--out", str(tmp_path / "run")])
    assert code == 2
    assert capsys.readouterr().err.startswith("error: config file not found")


def test_missing_data_is_exit_3(tmp_path, capsys):
    code = main(["train", "--data", str(tmp_path / "manifest.csv"), "--out", str(tmp_path / "run")])
    assert code == 3
    assert "manifest not found" in capsys.readouterr().err


def test_infer_writes_artifacts(tmp_path, checkpoint, capsys):
    image = _png(tmp_path / "street.png", 40)
    out = tmp_path / "out"
    assert main(["infer", "--checkpoint", checkpoint, "--input", image, "--out", str(out), "--seed", "3"]) == 0
    for name in INFERENCE_ARTIFACTS:
        assert (out / name).exists()
    with Image.open(out / "generated.png") as img:
        assert img.size == (16, 16)
    assert "policy_id=" in (out / "policy.txt").read_text(encoding="utf-8")
    assert "resolution=16" in capsys.readouterr().out


def test_native_input_must_divide(tmp_path, checkpoint, capsys):
    image = _png(tmp_path / "odd.png", 20)
    code = main(["infer", "--checkpoint", checkpoint, "--input", image, "--out", str(tmp_path / "out"), "--native"])
    assert code == 4
    assert "divisible by 16" in capsys.readouterr().err


def test_evaluate(tmp_path, checkpoint, synth_manifest_path, capsys):
    out = tmp_path / "eval"
    code = main(["evaluate", "--checkpoint", checkpoint, "--data", synth_manifest_path, "--out", str(out), "--pdf"])
    assert code == 0
    text = (out / "eval_test_model.tsv").read_text(encoding="utf-8")
    assert "fid\t" in text and "policy_mse\t" in text
    assert (out / "eval_report.pdf").read_bytes().startswith(b"%PDF")
    assert "feature_source\tQ" in capsys.readouterr().out


def test_subcommand_required():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def _policy_probs(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    return [float(p) for p in lines[2].split("=", 1)[1].split(",")]


def test_infer_seed_is_reproducible(tmp_path, checkpoint):
    image = _png(tmp_path / "street.png", 16)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["infer", "--checkpoint", checkpoint, "--input", image, "--out", str(out), "--seed", "7"]) == 0
    for name in INFERENCE_ARTIFACTS:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    probs = _policy_probs(outs[0] / "policy.txt")
    assert len(probs) == 9
    assert sum(probs) == pytest.approx(1.0, abs=1e-6)


def test_infer_gradcam_layer(tmp_path, checkpoint, capsys):
    image = _png(tmp_path / "street.png", 16)
    assert main(["infer", "--checkpoint", checkpoint, "--input", image, "--out", str(tmp_path / "o"),
                 "--gradcam-layer", "1"]) == 0
    assert "gradcam_layer=1" in capsys.readouterr().out
    code = main(["infer", "--checkpoint", checkpoint, "--input", image, "--out", str(tmp_path / "o"),
                 "--gradcam-layer", "4"])
    assert code == 2
    assert "gradcam_layer" in capsys.readouterr().err


def test_evaluate_echoes_to_metrics_log(tmp_path, checkpoint, synth_manifest_path):
    out = tmp_path / "eval"
    args = ["evaluate", "--checkpoint", checkpoint, "--data", synth_manifest_path, "--out", str(out),
            "--no-attention"]
    assert main(args) == 0
    assert main(args + ["--generated", "identity"]) == 0
    lines = (out / "metrics.tsv").read_text(encoding="utf-8").splitlines()
    assert all(line.startswith("# ") for line in lines)
    tags = [line for line in lines if line.startswith("# eval\t")]
    assert len(tags) == 2
    assert "generated=identity" in tags[1]
    assert "# feature_source\tQ" in lines
    assert any(line.startswith("# roi_fid\t") for line in lines)


def test_one_sample_split_is_exit_3(tmp_path, checkpoint, synth_manifest_path, capsys):
    root = os.path.dirname(synth_manifest_path)
    rows = pd.read_csv(synth_manifest_path)
    for col in ("path_a", "path_b"):
        rows[col] = [os.path.join(root, p) for p in rows[col]]
    rows["split"] = "train"
    rows.loc[rows.index[0], "split"] = "test"
    manifest = tmp_path / "manifest.csv"
    rows.to_csv(manifest, index=False)
    code = main(["evaluate", "--checkpoint", checkpoint, "--data", str(manifest), "--out", str(tmp_path / "eval")])
    assert code == 3
    assert "1 sample" in capsys.readouterr().err

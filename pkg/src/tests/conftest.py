# src/tests/conftest.py
import os
import sys

import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from src.config import desk_preset  # noqa: E402
from src.data.dataset import load_dataset, load_manifest  # noqa: E402
from src.data.synthetic import synth_generate  # noqa: E402

TINY_RES = 16


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full desk-scale run, enabled with DGAN_RUN_SLOW=1")


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """18 synthetic pairs at 16x16 (the smallest corpus that covers every class)."""
    out = tmp_path_factory.mktemp("synth")
    synth_generate(18, TINY_RES, seed=0, out_dir=str(out))
    return str(out)


@pytest.fixture(scope="session")
def synth_manifest_path(synth_dir):
    return os.path.join(synth_dir, "manifest.csv")


@pytest.fixture(scope="session")
def tiny_dataset(synth_manifest_path):
    return load_dataset(load_manifest(synth_manifest_path), TINY_RES)


@pytest.fixture
def tiny_config():
    return desk_preset(resolution=TINY_RES, gan_epochs=2, classifier_epochs=1, decay_start=1, checkpoint_every=1)

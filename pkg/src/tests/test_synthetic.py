# src/tests/test_synthetic.py
import os

import numpy as np
import pytest

from src.data.synthetic import MIN_PAIRS, TRANSFORMS, diff_bbox, synth_generate, synth_pair
from src.errors import UsageError


@pytest.mark.parametrize("policy_id", sorted(TRANSFORMS))
def test_pair_differs_only_inside_roi(policy_id):
    x, y, roi = synth_pair(policy_id, policy_id, 32, seed=0)
    assert x.shape == y.shape == (32, 32, 3) and x.dtype == np.uint8
    x0, y0, x1, y1 = roi
    assert 0 <= x0 < x1 <= 32 and 0 <= y0 < y1 <= 32
    outside = np.ones((32, 32), dtype=bool)
    outside[y0:y1, x0:x1] = False
    np.testing.assert_array_equal(x[outside], y[outside])
    assert np.any(x[y0:y1, x0:x1] != y[y0:y1, x0:x1])


def test_pairs_are_seeded():
    a = synth_pair(3, 5, 16, seed=7)
    b = synth_pair(3, 5, 16, seed=7)
    c = synth_pair(3, 5, 16, seed=8)
    np.testing.assert_array_equal(a[0], b[0])
    assert a[2] == b[2]
    assert not np.array_equal(a[0], c[0])


def test_diff_bbox():
    a = np.zeros((8, 8, 3), dtype=np.uint8)
    b = a.copy()
    b[2, 5] = 1
    b[4, 3] = 1
    assert diff_bbox(a, b) == (3, 2, 6, 5)
    with pytest.raises(ValueError):
        diff_bbox(a, a)


def test_generate_writes_corpus(synth_dir):
    names = sorted(os.listdir(synth_dir))
    assert "manifest.csv" in names and "roi.csv" in names
    assert len(os.listdir(os.path.join(synth_dir, "images"))) == 2 * 18
    header = open(os.path.join(synth_dir, "roi.csv"), encoding="utf-8").readline().strip()
    assert header == "pair_id,x0,y0,x1,y1"


def test_generate_contract(tmp_path):
    with pytest.raises(UsageError):
        synth_generate(MIN_PAIRS - 1, 16, 0, str(tmp_path))
    with pytest.raises(UsageError):
        synth_generate(MIN_PAIRS, 12, 0, str(tmp_path))

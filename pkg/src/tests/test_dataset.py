# src/tests/test_dataset.py
import os
import shutil

import numpy as np
import pytest

from src.data.dataset import (
    MANIFEST_COLUMNS, REFERENCE_COUNTS, augment_hflip, load_dataset, load_manifest, load_pair, policy_name,
    split_dataset,
)
from src.data.synthetic import synth_generate
from src.errors import DataError, UsageError


def _manifest(tmp_path, synth_dir, lines, header=",".join(MANIFEST_COLUMNS)):
    """Write a manifest next to copies of the synthetic images."""
    images = tmp_path / "images"
    if not images.exists():
        shutil.copytree(os.path.join(synth_dir, "images"), images)
    path = tmp_path / "manifest.csv"
    path.write_text("\n".join([header] + lines) + "\n", encoding="utf-8")
    return str(path)


GOOD = "images/pair_0000_a.png,images/pair_0000_b.png,1,train"


def test_loads_synthetic_manifest(synth_manifest_path):
    manifest = load_manifest(synth_manifest_path)
    assert len(manifest) == 18
    assert sum(manifest.counts_per_split().values()) == 18
    assert all(n >= 2 for n in manifest.counts_per_class().values())
    assert len(manifest.rois) == 18
    assert not manifest.matches_reference()
    report = manifest.reference_report()
    assert len(report) == len(REFERENCE_COUNTS) + 2
    assert report[-1].split("\t")[-1] == "372"


def test_decoded_samples(tiny_dataset):
    s = tiny_dataset.samples[0]
    assert s.x.shape == (1, 3, 16, 16) and s.x.dtype == np.float32
    assert s.x.min() >= -1.0 and s.x.max() <= 1.0
    assert s.pair_id == 0 and s.roi is not None
    assert [t.pair_id for t in tiny_dataset.samples] == list(range(18))
    assert tiny_dataset.held_out()


def test_threads_keep_order(synth_manifest_path, tiny_dataset):
    threaded = load_dataset(load_manifest(synth_manifest_path), 16, threads=3)
    for a, b in zip(tiny_dataset.samples, threaded.samples):
        np.testing.assert_array_equal(a.x, b.x)
        assert a.m == b.m


@pytest.mark.parametrize("header", ["path_a,path_b,policy,split", "path_b,path_a,policy_id,split"])
def test_header_must_match(tmp_path, synth_dir, header):
    with pytest.raises(DataError, match="header"):
        load_manifest(_manifest(tmp_path, synth_dir, [GOOD], header=header))


@pytest.mark.parametrize("bad_row", [
    "images/pair_0001_a.png,images/pair_0001_b.png,9,train",
    "images/pair_0001_a.png,images/pair_0001_b.png,0,train",
    "images/pair_0001_a.png,images/pair_0001_b.png,two,train",
    "images/pair_0001_a.png,images/pair_0001_b.png,2,holdout",
    "images/missing.png,images/pair_0001_b.png,2,train",
    GOOD,
])
def test_bad_rows_are_numbered(tmp_path, synth_dir, bad_row):
    path = _manifest(tmp_path, synth_dir, [GOOD, bad_row])
    with pytest.raises(DataError, match="row 2") as exc:
        load_manifest(path)
    assert exc.value.exit_code == 3


def test_undecodable_image(tmp_path, synth_dir):
    path = _manifest(tmp_path, synth_dir, ["images/broken.png,images/pair_0000_b.png,1,train"])
    (tmp_path / "images" / "broken.png").write_bytes(b"not a png")
    with pytest.raises(DataError, match="row 1"):
        load_manifest(path)


def test_empty_manifest(tmp_path, synth_dir):
    with pytest.raises(DataError):
        load_manifest(_manifest(tmp_path, synth_dir, []))


def test_hflip(tiny_dataset):
    s = tiny_dataset.samples[3]
    assert augment_hflip(s, False) is s
    flipped = augment_hflip(s, True)
    np.testing.assert_array_equal(flipped.x[..., ::-1], s.x)
    np.testing.assert_array_equal(flipped.y[..., ::-1], s.y)
    assert flipped.m == s.m
    x0, y0, x1, y1 = s.roi
    assert flipped.roi == (16 - x1, y0, 16 - x0, y1)
    np.testing.assert_array_equal(augment_hflip(flipped, True).x, s.x)


def test_split_is_stratified_and_deterministic(synth_manifest_path):
    manifest = load_manifest(synth_manifest_path)
    a = split_dataset(manifest, (0.5, 0.25, 0.25), seed=4)
    b = split_dataset(manifest, (0.5, 0.25, 0.25), seed=4)
    assert [r.split for r in a.rows] == [r.split for r in b.rows]
    assert [r.policy_id for r in a.rows] == [r.policy_id for r in manifest.rows]
    with pytest.raises(UsageError):
        split_dataset(manifest, (0.5, 0.5, 0.5))


def test_split_on_larger_corpus(tmp_path):
    manifest = synth_generate(80, 16, seed=1, out_dir=str(tmp_path))
    counts = manifest.counts_per_split()
    assert counts["train"] == 56
    assert sum(counts.values()) == 80
    for cid in range(1, 9):
        splits = {r.split for r in manifest.rows if r.policy_id == cid}
        assert splits == {"train", "val", "test"}


def test_roi_scales_with_resolution(tmp_path):
    manifest = synth_generate(18, 32, seed=2, out_dir=str(tmp_path))
    native = manifest.rois[5]
    small = load_pair(load_manifest(os.path.join(str(tmp_path), "manifest.csv")), 5, 16)
    x0, y0, x1, y1 = small.roi
    assert x0 <= native[0] // 2 and y0 <= native[1] // 2
    assert x1 >= native[2] // 2 and y1 >= native[3] // 2
    assert x1 <= 16 and y1 <= 16


def test_policy_names():
    assert policy_name(1) == "adding cycle lane"
    assert policy_name(9) == "no policy"
    with pytest.raises(UsageError):
        policy_name(0)

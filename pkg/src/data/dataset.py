# src/data/dataset.py
"""
Paired before/after image data.

Manifest CSV header is exactly `path_a,path_b,policy_id,split`; paths are
resolved relative to the manifest's directory. A manifest row's index is its
pair id, which is also the key of the optional ROI sidecar `roi.csv`
(`pair_id,x0,y0,x1,y1`, half-open pixel boxes).
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError, field_validator

from src.errors import DataError, UsageError
from src.utils.image_utils import image_size, load_image
from src.utils.logging_utils import get_logger

LOG = get_logger("dataset")

MANIFEST_COLUMNS = ["path_a", "path_b", "policy_id", "split"]
ROI_COLUMNS = ["pair_id", "x0", "y0", "x1", "y1"]
SPLITS = ("train", "val", "test")

POLICY_CLASSES: Dict[int, str] = {
    1: "adding cycle lane",
    2: "adding greenery",
    3: "adding pedestrian only zone",
    4: "adding sidewalks",
    5: "façade painting",
    6: "façade remodelling",
    7: "open space remodelling",
    8: "road maintenance",
    9: "no policy",
}
NULL_CLASS = 9
N_PAIR_CLASSES = 8
# reference pair counts of the real 372-pair corpus, classes 1..8
REFERENCE_COUNTS: Dict[int, int] = {1: 24, 2: 40, 3: 54, 4: 55, 5: 23, 6: 97, 7: 29, 8: 50}

Roi = Tuple[int, int, int, int]


def policy_name(policy_id: int) -> str:
    if policy_id not in POLICY_CLASSES:
        raise UsageError(f"policy id {policy_id} outside 1..{len(POLICY_CLASSES)}")
    return POLICY_CLASSES[policy_id]


class ManifestRow(BaseModel):
    path_a: str
    path_b: str
    policy_id: int
    split: Literal["train", "val", "test"]

    @field_validator("path_a", "path_b")
    @classmethod
    def _non_empty(cls, v):
        if not v.strip():
            raise ValueError("empty path")
        return v.strip()

    @field_validator("policy_id")
    @classmethod
    def _pair_class(cls, v):
        if not 1 <= v <= N_PAIR_CLASSES:
            raise ValueError(f"policy_id {v} outside 1..{N_PAIR_CLASSES}")
        return v


@dataclass
class PairedSample:
    x: np.ndarray  # (1, 3, R, R) float32 in [-1, 1]
    y: np.ndarray
    m: int
    split: str = "train"
    roi: Optional[Roi] = None
    pair_id: int = -1

    @property
    def resolution(self) -> int:
        return self.x.shape[-1]


@dataclass
class Manifest:
    rows: List[ManifestRow]
    root: str = "."
    rois: Dict[int, Roi] = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def resolve(self, rel: str) -> str:
        return rel if os.path.isabs(rel) else os.path.normpath(os.path.join(self.root, rel))

    def counts_per_class(self) -> Dict[int, int]:
        counts = {c: 0 for c in range(1, N_PAIR_CLASSES + 1)}
        for r in self.rows:
            counts[r.policy_id] += 1
        return counts

    def counts_per_split(self) -> Dict[str, int]:
        counts = {s: 0 for s in SPLITS}
        for r in self.rows:
            counts[r.split] += 1
        return counts

    def reference_report(self) -> List[str]:
        """Class counts side by side with the reference corpus counts."""
        counts = self.counts_per_class()
        lines = [f"{'class':<30}\tfound\treference"]
        for cid, ref in REFERENCE_COUNTS.items():
            lines.append(f"{POLICY_CLASSES[cid]:<30}\t{counts[cid]}\t{ref}")
        lines.append(f"{'total':<30}\t{len(self.rows)}\t{sum(REFERENCE_COUNTS.values())}")
        return lines

    def matches_reference(self) -> bool:
        return self.counts_per_class() == REFERENCE_COUNTS

    def to_csv(self, path: str):
        df = pd.DataFrame([r.model_dump() for r in self.rows], columns=MANIFEST_COLUMNS)
        df.to_csv(path, index=False)


# -------------------------
# Manifest loading / validation
# -------------------------
def _read_csv(path: str, columns: Sequence[str], what: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DataError(f"{what} not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"cannot parse {what} {path}: {e}") from None
    if list(df.columns) != list(columns):
        raise DataError(f"{what} header must be exactly '{','.join(columns)}', got '{','.join(map(str, df.columns))}'")
    return df


def load_roi_sidecar(path: str) -> Dict[int, Roi]:
    df = _read_csv(path, ROI_COLUMNS, "ROI sidecar")
    rois: Dict[int, Roi] = {}
    for i, rec in enumerate(df.to_dict("records"), 1):
        try:
            pid, x0, y0, x1, y1 = (int(rec[c]) for c in ROI_COLUMNS)
        except ValueError:
            raise DataError("ROI fields must be integers", row=i) from None
        if not (0 <= x0 < x1 and 0 <= y0 < y1):
            raise DataError(f"ROI ({x0},{y0},{x1},{y1}) is empty or negative", row=i)
        rois[pid] = (x0, y0, x1, y1)
    return rois


def load_manifest(path: str, check_images: bool = True) -> Manifest:
    """Validate every row; rows are numbered from 1 after the header."""
    df = _read_csv(path, MANIFEST_COLUMNS, "manifest")
    root = os.path.dirname(os.path.abspath(path))
    rows: List[ManifestRow] = []
    seen: Dict[Tuple[str, str], int] = {}
    manifest = Manifest(rows, root)
    for i, rec in enumerate(df.to_dict("records"), 1):
        try:
            row = ManifestRow(path_a=rec["path_a"], path_b=rec["path_b"],
                              policy_id=int(rec["policy_id"]), split=rec["split"].strip())
        except ValueError as e:
            # int() failures and pydantic ValidationError (a ValueError) both land here
            msg = e.errors()[0]["msg"] if isinstance(e, ValidationError) else f"policy_id '{rec['policy_id']}' is not an integer"
            raise DataError(msg, row=i) from None
        key = (manifest.resolve(row.path_a), manifest.resolve(row.path_b))
        if key in seen:
            raise DataError(f"duplicate pair (first seen at row {seen[key]})", row=i)
        seen[key] = i
        if check_images:
            sizes = []
            for p in key:
                try:
                    sizes.append(image_size(p))
                except DataError as e:
                    raise DataError(str(e), row=i) from None
            if sizes[0] != sizes[1]:
                LOG.warning("row %d: before/after sizes differ (%s vs %s); both are resized on load", i, *sizes)
        rows.append(row)
    if not rows:
        raise DataError(f"manifest {path} has no rows")
    sidecar = os.path.join(root, "roi.csv")
    if os.path.exists(sidecar):
        manifest.rois = load_roi_sidecar(sidecar)
    LOG.info("loaded manifest %s: %d pairs, per split %s", path, len(rows), manifest.counts_per_split())
    return manifest


# -------------------------
# Samples
# -------------------------
def load_pair(manifest: Manifest, index: int, resolution: int) -> PairedSample:
    """Decode row `index` (0-based) to a PairedSample at the square resolution."""
    row = manifest.rows[index]
    path_a, path_b = manifest.resolve(row.path_a), manifest.resolve(row.path_b)
    try:
        native = image_size(path_a)
        x = load_image(path_a, resolution)
        y = load_image(path_b, resolution)
    except DataError as e:
        raise DataError(str(e), row=index + 1) from None
    roi = manifest.rois.get(index)
    if roi is not None and native != (resolution, resolution):
        sx, sy = resolution / native[0], resolution / native[1]
        x0, y0, x1, y1 = roi
        roi = (int(np.floor(x0 * sx)), int(np.floor(y0 * sy)), int(np.ceil(x1 * sx)), int(np.ceil(y1 * sy)))
    return PairedSample(x=x, y=y, m=row.policy_id, split=row.split, roi=roi, pair_id=index)


def augment_hflip(sample: PairedSample, coin: bool) -> PairedSample:
    """Mirror x and y together when coin is set. No cropping, label unchanged."""
    if not coin:
        return sample
    roi = sample.roi
    if roi is not None:
        w = sample.x.shape[-1]
        x0, y0, x1, y1 = roi
        roi = (w - x1, y0, w - x0, y1)
    return replace(sample, x=np.ascontiguousarray(sample.x[..., ::-1]),
                   y=np.ascontiguousarray(sample.y[..., ::-1]), roi=roi)


def split_dataset(manifest: Manifest, ratios: Tuple[float, float, float] = (0.7, 0.15, 0.15), seed: int = 0) -> Manifest:
    """Stratified per class; each class is shuffled with its own seeded stream."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise UsageError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    active = sum(1 for r in ratios if r > 0)
    by_class: Dict[int, List[int]] = {}
    for i, r in enumerate(manifest.rows):
        by_class.setdefault(r.policy_id, []).append(i)

    assigned: Dict[int, str] = {}
    for cid in sorted(by_class):
        idx = by_class[cid]
        n = len(idx)
        if n < active:
            LOG.warning("class %d has %d samples for %d splits; keeping it whole in train", cid, n, active)
            for i in idx:
                assigned[i] = "train"
            continue
        order = np.random.default_rng([seed, cid]).permutation(n)
        n_train = int(round(n * ratios[0]))
        n_val = min(int(round(n * ratios[1])), n - n_train)
        for rank, pos in enumerate(order):
            if rank < n_train:
                split = "train"
            elif rank < n_train + n_val:
                split = "val"
            else:
                split = "test"
            assigned[idx[pos]] = split
    rows = [r.model_copy(update={"split": assigned[i]}) for i, r in enumerate(manifest.rows)]
    return Manifest(rows, manifest.root, dict(manifest.rois))


class PairedDataset:
    """Decoded samples in manifest order."""

    def __init__(self, samples: List[PairedSample], manifest: Manifest = None):
        self.samples = samples
        self.manifest = manifest

    def __len__(self):
        return len(self.samples)

    def split(self, name: str) -> List[PairedSample]:
        if name not in SPLITS:
            raise UsageError(f"unknown split '{name}', expected one of {SPLITS}")
        return [s for s in self.samples if s.split == name]

    def held_out(self) -> List[PairedSample]:
        """val, falling back to test, then train."""
        for name in ("val", "test", "train"):
            picked = self.split(name)
            if picked:
                return picked
        return []


def load_dataset(manifest: Manifest, resolution: int, threads: int = 1) -> PairedDataset:
    """Decode every pair. Worker threads only affect speed; order follows the manifest."""
    if resolution <= 0 or resolution % 8:
        raise UsageError(f"resolution must be a positive multiple of 8, got {resolution}")
    indices = range(len(manifest))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(lambda i: load_pair(manifest, i, resolution), indices))
    else:
        samples = [load_pair(manifest, i, resolution) for i in indices]
    LOG.info("decoded %d pairs at %dx%d", len(samples), resolution, resolution)
    return PairedDataset(samples, manifest)

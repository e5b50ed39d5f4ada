# src/data/synthetic.py
"""
Procedural paired-intervention corpus.

Each pair shares one textured street scene. Inside a class-specific region the
before-image x shows a defect (potholes, boarded windows, bare lot, ...) and the
after-image y shows the intervention (clean road, glass facade, plaza, ...).
Outside that region x and y are bit-identical; the recorded ROI is the tight
bounding box of the pixels that actually differ.
"""
import os
from typing import Callable, Dict, List, Tuple

import numpy as np
import pandas as pd
from PIL import Image, ImageDraw

from src.data.dataset import (
    N_PAIR_CLASSES, NULL_CLASS, ROI_COLUMNS, Manifest, ManifestRow, Roi, split_dataset,
)
from src.errors import UsageError
from src.utils.image_utils import save_uint8_png
from src.utils.logging_utils import get_logger

LOG = get_logger("synthetic")

MIN_PAIRS = 2 * NULL_CLASS

# scene bands as fractions of the resolution (top, bottom)
SKY = (0.0, 0.3)
BUILDINGS = (0.1, 0.6)
SIDEWALK = (0.6, 0.7)
ROAD = (0.7, 1.0)

Box = Tuple[int, int, int, int]


def _jitter(rng: np.random.Generator, rgb, amount: int = 12) -> Tuple[int, int, int]:
    return tuple(int(np.clip(c + rng.integers(-amount, amount + 1), 0, 255)) for c in rgb)


# -------------------------
# Scene
# -------------------------
def _street_scene(res: int, rng: np.random.Generator) -> np.ndarray:
    img = Image.new("RGB", (res, res), _jitter(rng, (150, 190, 225)))
    draw = ImageDraw.Draw(img)
    top, bottom = int(BUILDINGS[0] * res), int(BUILDINGS[1] * res)
    x = 0
    while x < res:
        width = int(rng.integers(res // 6, res // 3))
        height_top = int(rng.integers(top, (top + bottom) // 2))
        draw.rectangle([x, height_top, x + width - 1, bottom - 1], fill=_jitter(rng, (170, 150, 130), 30))
        x += width
    draw.rectangle([0, int(SIDEWALK[0] * res), res - 1, int(SIDEWALK[1] * res) - 1], fill=_jitter(rng, (185, 180, 170)))
    draw.rectangle([0, int(ROAD[0] * res), res - 1, res - 1], fill=_jitter(rng, (80, 80, 85)))
    arr = np.asarray(img, dtype=np.int16)
    noise = rng.integers(-10, 11, size=arr.shape, dtype=np.int16)
    return np.clip(arr + noise, 0, 255).astype(np.uint8)


def _region(band: Tuple[float, float], res: int, rng: np.random.Generator, min_frac=0.25, max_frac=0.45) -> Box:
    """Random box inside a horizontal band: (x0, y0, x1, y1), half-open."""
    y0, y1 = int(band[0] * res), int(band[1] * res)
    w = int(rng.integers(int(min_frac * res), int(max_frac * res) + 1))
    x0 = int(rng.integers(0, res - w + 1))
    return x0, y0, x0 + w, y1


# -------------------------
# Class transforms: draw(draw, w, h, rng) onto the region crop
# -------------------------
def _faded_marks(d, w, h, rng):
    for x in range(2, w - 4, 8):
        d.line([x, h // 2, x + 3, h // 2], fill=_jitter(rng, (120, 120, 120)), width=1)


def _cycle_lane(d, w, h, rng):
    d.rectangle([0, h // 3, w - 1, 2 * h // 3], fill=_jitter(rng, (40, 150, 70), 8))
    d.line([0, h // 3, w - 1, h // 3], fill=(245, 245, 245), width=1)
    d.line([0, 2 * h // 3, w - 1, 2 * h // 3], fill=(245, 245, 245), width=1)


def _dirt_patches(d, w, h, rng):
    for _ in range(3):
        cx, cy = int(rng.integers(0, w)), int(rng.integers(0, h))
        r = max(2, h // 3)
        d.ellipse([cx - r, cy - r, cx + r, cy + r], fill=_jitter(rng, (120, 90, 60)))


def _trees(d, w, h, rng):
    r = max(2, h // 2)
    for cx in range(r, w, 2 * r + 2):
        d.ellipse([cx - r, 0, cx + r, h - 1], fill=_jitter(rng, (30, 130, 40), 15))


def _parked_cars(d, w, h, rng):
    for x in range(1, w - 6, 10):
        d.rectangle([x, h // 4, x + 6, h // 2 + 2], fill=_jitter(rng, (200, 40, 40), 40))


def _paving(d, w, h, rng):
    d.rectangle([0, 0, w - 1, h - 1], fill=_jitter(rng, (215, 200, 165), 6))
    for y in range(0, h, 4):
        d.line([0, y, w - 1, y], fill=(190, 175, 140), width=1)


def _mud_strip(d, w, h, rng):
    d.rectangle([0, 0, w - 1, max(1, h // 4)], fill=_jitter(rng, (110, 80, 50)))


def _sidewalk_strip(d, w, h, rng):
    d.rectangle([0, 0, w - 1, max(2, h // 3)], fill=_jitter(rng, (200, 200, 200), 5))
    d.line([0, max(2, h // 3), w - 1, max(2, h // 3)], fill=(240, 240, 240), width=1)


def _stained_facade(d, w, h, rng):
    d.rectangle([0, 0, w - 1, h - 1], fill=_jitter(rng, (120, 110, 95)))
    for _ in range(5):
        cx, cy = int(rng.integers(0, w)), int(rng.integers(0, h))
        d.ellipse([cx - 2, cy - 2, cx + 2, cy + 2], fill=(60, 55, 45))


def _painted_facade(d, w, h, rng):
    palette = [(230, 120, 60), (70, 130, 210), (240, 210, 80), (200, 80, 140)]
    d.rectangle([0, 0, w - 1, h - 1], fill=palette[int(rng.integers(len(palette)))])


def _boarded_windows(d, w, h, rng):
    for y in range(2, h - 4, 7):
        for x in range(2, w - 4, 7):
            d.rectangle([x, y, x + 3, y + 3], fill=_jitter(rng, (100, 65, 30), 6))


def _glass_windows(d, w, h, rng):
    for y in range(2, h - 4, 7):
        for x in range(2, w - 4, 7):
            d.rectangle([x, y, x + 4, y + 4], fill=_jitter(rng, (150, 210, 240), 6))


def _rubble_lot(d, w, h, rng):
    d.rectangle([0, 0, w - 1, h - 1], fill=_jitter(rng, (140, 115, 80)))
    for _ in range(max(6, w // 2)):
        x, y = int(rng.integers(0, w)), int(rng.integers(0, h))
        d.point([x, y], fill=(90, 90, 90))


def _plaza(d, w, h, rng):
    tile = 4
    for y in range(0, h, tile):
        for x in range(0, w, tile):
            shade = 225 if ((x // tile) + (y // tile)) % 2 == 0 else 175
            d.rectangle([x, y, x + tile - 1, y + tile - 1], fill=(shade, shade, shade - 20))


def _potholes(d, w, h, rng):
    for _ in range(3):
        cx, cy = int(rng.integers(2, max(3, w - 2))), int(rng.integers(2, max(3, h - 2)))
        r = max(2, h // 5)
        d.ellipse([cx - r, cy - r, cx + r, cy + r], fill=_jitter(rng, (25, 25, 25), 5))


def _clean_road(d, w, h, rng):
    # repaired road: fresh asphalt tone plus a centre stripe
    d.rectangle([0, 0, w - 1, h - 1], fill=_jitter(rng, (60, 60, 65), 3))
    d.line([0, h // 2, w - 1, h // 2], fill=(240, 220, 60), width=1)


Draw = Callable[[ImageDraw.ImageDraw, int, int, np.random.Generator], None]

# class id -> (scene band, before-image defect, after-image intervention)
TRANSFORMS: Dict[int, Tuple[Tuple[float, float], Draw, Draw]] = {
    1: (ROAD, _faded_marks, _cycle_lane),
    2: (SIDEWALK, _dirt_patches, _trees),
    3: (ROAD, _parked_cars, _paving),
    4: (ROAD, _mud_strip, _sidewalk_strip),
    5: (BUILDINGS, _stained_facade, _painted_facade),
    6: (BUILDINGS, _boarded_windows, _glass_windows),
    7: (SIDEWALK, _rubble_lot, _plaza),
    8: (ROAD, _potholes, _clean_road),
}


def _apply(base: np.ndarray, box: Box, draw_fn: Draw, rng: np.random.Generator) -> np.ndarray:
    out = base.copy()
    x0, y0, x1, y1 = box
    crop = Image.fromarray(out[y0:y1, x0:x1])
    draw_fn(ImageDraw.Draw(crop), x1 - x0, y1 - y0, rng)
    out[y0:y1, x0:x1] = np.asarray(crop)
    return out


def diff_bbox(a: np.ndarray, b: np.ndarray) -> Roi:
    """Tight half-open (x0, y0, x1, y1) box of pixels where a and b differ."""
    ys, xs = np.nonzero(np.any(a != b, axis=-1))
    if ys.size == 0:
        raise ValueError("images are identical")
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def synth_pair(index: int, policy_id: int, resolution: int, seed: int) -> Tuple[np.ndarray, np.ndarray, Roi]:
    rng = np.random.default_rng([seed, index])
    base = _street_scene(resolution, rng)
    band, before_fn, after_fn = TRANSFORMS[policy_id]
    box = _region(band, resolution, rng)
    x = _apply(base, box, before_fn, rng)
    y = _apply(base, box, after_fn, rng)
    if not np.any(x != y):
        # degenerate draw; mark the region's first pixel so the ROI is never empty
        y[box[1], box[0]] = 255 - x[box[1], box[0]]
    return x, y, diff_bbox(x, y)


def synth_generate(n: int, resolution: int, seed: int, out_dir: str,
                   ratios: Tuple[float, float, float] = (0.7, 0.15, 0.15)) -> Manifest:
    """Write n pairs, manifest.csv and roi.csv to out_dir. Classes are assigned round-robin."""
    if n < MIN_PAIRS:
        raise UsageError(f"synthetic corpus needs n >= {MIN_PAIRS} so every class appears, got {n}")
    if resolution <= 0 or resolution % 8:
        raise UsageError(f"resolution must be a positive multiple of 8, got {resolution}")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)

    rows: List[ManifestRow] = []
    rois: Dict[int, Roi] = {}
    for i in range(n):
        policy_id = (i % N_PAIR_CLASSES) + 1
        x, y, roi = synth_pair(i, policy_id, resolution, seed)
        rel_a, rel_b = f"images/pair_{i:04d}_a.png", f"images/pair_{i:04d}_b.png"
        save_uint8_png(x, os.path.join(out_dir, rel_a))
        save_uint8_png(y, os.path.join(out_dir, rel_b))
        rows.append(ManifestRow(path_a=rel_a, path_b=rel_b, policy_id=policy_id, split="train"))
        rois[i] = roi

    manifest = split_dataset(Manifest(rows, os.path.abspath(out_dir), rois), ratios, seed)
    manifest.to_csv(os.path.join(out_dir, "manifest.csv"))
    pd.DataFrame([(pid, *box) for pid, box in sorted(rois.items())], columns=ROI_COLUMNS).to_csv(
        os.path.join(out_dir, "roi.csv"), index=False)
    LOG.info("wrote %d synthetic pairs at %dx%d to %s (splits %s)",
             n, resolution, resolution, out_dir, manifest.counts_per_split())
    return manifest

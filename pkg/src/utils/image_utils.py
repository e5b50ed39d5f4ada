# src/utils/image_utils.py
"""Pillow-backed image I/O and [-1, 1] <-> 8-bit conversions."""
import os
from typing import Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from src.errors import DataError
from src.utils.logging_utils import get_logger

LOG = get_logger("image_utils")


def open_rgb(image_path: str) -> Image.Image:
    """Open an image as RGB. Non-RGB inputs are converted with a warning."""
    try:
        img = Image.open(image_path)
        img.load()
    except FileNotFoundError:
        raise DataError(f"image not found: {image_path}") from None
    except (UnidentifiedImageError, OSError) as e:
        raise DataError(f"cannot decode image {image_path}: {e}") from None
    if img.width == 0 or img.height == 0:
        raise DataError(f"image {image_path} has zero size")
    if img.mode != "RGB":
        LOG.warning("converting %s from %s to RGB", os.path.basename(image_path), img.mode)
        img = img.convert("RGB")
    return img


def resize_square(img: Image.Image, resolution: int) -> Image.Image:
    if img.size == (resolution, resolution):
        return img
    return img.resize((resolution, resolution), Image.BILINEAR)


def to_unit_range(pixels: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) -> float32 (1, 3, H, W) in [-1, 1]: v * 2 / 255 - 1."""
    arr = np.asarray(pixels, dtype=np.float32)
    return (arr * (2.0 / 255.0) - 1.0).transpose(2, 0, 1)[None].astype(np.float32)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """(1, 3, H, W) or (3, H, W) in [-1, 1] -> uint8 (H, W, 3)."""
    arr = np.asarray(image)
    if arr.ndim == 4:
        arr = arr[0]
    arr = np.clip((arr.transpose(1, 2, 0) + 1.0) * 127.5, 0, 255)
    return np.rint(arr).astype(np.uint8)


def load_image(image_path: str, resolution: int = None) -> np.ndarray:
    img = open_rgb(image_path)
    if resolution is not None:
        img = resize_square(img, resolution)
    return to_unit_range(np.asarray(img))


def image_size(image_path: str) -> Tuple[int, int]:
    """(width, height) without converting."""
    return open_rgb(image_path).size


def save_rgb_png(image: np.ndarray, path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")


def save_gray_png(values: np.ndarray, path: str):
    """(H, W) values in [0, 1] as an 8-bit grayscale PNG."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    gray = np.rint(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path, format="PNG")


def save_uint8_png(pixels: np.ndarray, path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB").save(path, format="PNG")

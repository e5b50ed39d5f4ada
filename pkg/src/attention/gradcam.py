# src/attention/gradcam.py
"""Grad-CAM over a policy-classifier conv block (the last by default), plus heatmap overlays."""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor, backward
from src.errors import ConfigError, ShapeError, UsageError
from src.networks.classifier import PolicyClassifier
from src.utils.image_utils import to_uint8
from src.utils.logging_utils import get_logger

LOG = get_logger("gradcam")

OVERLAY_ALPHA = 0.5


@dataclass
class AttentionMap:
    values: np.ndarray  # (H, W) in [0, 1]
    source_class: int
    source_layer: str
    all_zero: bool = False
    probs: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def mean_inside(self, roi) -> float:
        x0, y0, x1, y1 = roi
        return float(self.values[y0:y1, x0:x1].mean())

    def mean_outside(self, roi) -> float:
        x0, y0, x1, y1 = roi
        mask = np.ones(self.values.shape, dtype=bool)
        mask[y0:y1, x0:x1] = False
        return float(self.values[mask].mean()) if mask.any() else 0.0


def gradcam_from_activations(activations: np.ndarray, gradients: np.ndarray,
                             size: Tuple[int, int]) -> Tuple[np.ndarray, bool]:
    """
    activations, gradients: (K, h, w). Returns (map, all_zero) where map is
    ReLU(sum_k alpha_k A_k), alpha_k = spatial mean of the gradient, bilinearly
    resized to `size` and max-normalised.
    """
    if activations.shape != gradients.shape or activations.ndim != 3:
        raise ShapeError(f"activations {activations.shape} and gradients {gradients.shape} must be matching (K, h, w)")
    a = activations.astype(np.float64)
    alpha = gradients.astype(np.float64).mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(alpha, a, axes=(0, 0)), 0.0)
    rh = ops.bilinear_matrix(cam.shape[0], size[0])
    rw = ops.bilinear_matrix(cam.shape[1], size[1])
    up = rh @ cam @ rw.T
    peak = up.max()
    if not peak > 0:
        return np.zeros(size, dtype=np.float64), True
    return np.clip(up / peak, 0.0, 1.0), False


def resolve_layer(layer: int, n_blocks: int) -> int:
    """Non-negative index of a Q block; negative layers count from the last block."""
    if not -n_blocks <= layer < n_blocks:
        raise ConfigError(f"gradcam_layer {layer} outside [-{n_blocks}, {n_blocks - 1}] for {n_blocks} classifier blocks",
                          key="gradcam_layer")
    return layer % n_blocks


def gradcam_map(Q: PolicyClassifier, image, class_id: int = None, layer: int = -1) -> AttentionMap:
    """Attention for class_id (1-based; defaults to Q's argmax) from conv block `layer`."""
    index = resolve_layer(layer, len(Q.spec.block_channels))
    img = Q.as_input(image)
    if img.shape[0] != 1:
        raise ShapeError(f"gradcam_map takes a single image, got batch {img.shape}")
    was_training = Q.training
    Q.eval()
    try:
        out = Q.forward(Tensor(img.data))
        probs = out.probs.data[0, :, 0, 0].astype(np.float64)
        n = probs.shape[0]
        c = int(np.argmax(probs)) + 1 if class_id is None else class_id
        if not 1 <= c <= n:
            raise UsageError(f"class id {c} outside 1..{n}")
        target = out.blocks[index]
        # pre-softmax score of the class
        backward(ops.slice_channels(out.logits, c - 1, c))
        grads = target.grad
        Q.zero_grad()
    finally:
        Q.training = was_training
    values, all_zero = gradcam_from_activations(target.data[0], grads[0], img.shape[2:])
    if all_zero:
        LOG.warning("Grad-CAM map for class %d is identically zero", c)
    return AttentionMap(values, c, f"block{index}", all_zero, probs)


def color_ramp(values: np.ndarray) -> np.ndarray:
    """Fixed blue-cyan-yellow-red ramp: (H, W) in [0, 1] -> (H, W, 3) float in [0, 255]."""
    v = np.clip(values, 0.0, 1.0)[..., None]
    centres = np.array([3.0, 2.0, 1.0])
    return np.clip(1.5 - np.abs(4.0 * v - centres), 0.0, 1.0) * 255.0


def overlay(image: np.ndarray, amap: AttentionMap) -> np.ndarray:
    """Alpha-blend the heatmap onto an image in [-1, 1]; returns uint8 (H, W, 3)."""
    base = to_uint8(image)
    if base.shape[:2] != amap.values.shape:
        raise ShapeError(f"image {base.shape[:2]} and attention map {amap.values.shape} differ in size")
    alpha = (OVERLAY_ALPHA * np.clip(amap.values, 0.0, 1.0))[..., None]
    blended = base.astype(np.float64) * (1.0 - alpha) + color_ramp(amap.values) * alpha
    return np.rint(blended).astype(np.uint8)

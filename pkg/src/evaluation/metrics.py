# src/evaluation/metrics.py
"""
Frechet distance metrics over policy-classifier features, ROI difference images
and policy-probability MSE.

Features come from the trained classifier's global-average-pooled final block
(feature_source=Q), not from an Inception network.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg

from src.attention.gradcam import gradcam_map
from src.data.dataset import NULL_CLASS, PairedSample
from src.errors import DataError, NumericError, ShapeError, UsageError
from src.networks.checkpoint import ModelBundle
from src.networks.classifier import PolicyClassifier
from src.utils.logging_utils import get_logger

LOG = get_logger("evaluation")

FEATURE_SOURCE = "Q"
SYMMETRY_TOL = 1e-8
EIG_CLAMP = -1e-8
LOW_VARIANCE = 1e-10
GENERATED_SOURCES = ("model", "identity", "ground_truth")
EVAL_NOISE_STREAM = 11


@dataclass
class FeatureSet:
    features: np.ndarray  # (n, d)
    source: str = FEATURE_SOURCE

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise UsageError(f"a feature set is an (n, d) matrix, got shape {self.features.shape}")
        if self.features.shape[0] < 2:
            raise DataError(f"a feature set needs at least 2 samples, got {self.features.shape[0]}")
        if not np.all(np.isfinite(self.features)):
            raise NumericError("feature set contains non-finite values")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def mean(self) -> np.ndarray:
        return self.features.mean(axis=0)

    def covariance(self) -> np.ndarray:
        return np.atleast_2d(np.cov(self.features, rowvar=False, ddof=1))


# -------------------------
# Linear algebra
# -------------------------
def matrix_sqrt_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root by eigendecomposition; eigenvalues in [-1e-8, 0) are clamped to 0."""
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if m.shape[0] != m.shape[1]:
        raise NumericError(f"matrix_sqrt_psd needs a square matrix, got {m.shape}")
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > SYMMETRY_TOL:
        raise NumericError(f"matrix is not symmetric (max |M - M^T| = {asym:.3e})")
    vals, vecs = scipy.linalg.eigh((m + m.T) / 2.0)
    if vals.size and vals.min() < EIG_CLAMP * max(1.0, abs(vals).max()):
        LOG.warning("matrix_sqrt_psd: clamping negative eigenvalue %.3e", vals.min())
    root = np.sqrt(np.clip(vals, 0.0, None))
    return (vecs * root) @ vecs.T


def frechet_distance(mu_r: np.ndarray, sigma_r: np.ndarray, mu_g: np.ndarray, sigma_g: np.ndarray) -> float:
    """||mu_r - mu_g||^2 + tr(sigma_r + sigma_g - 2 sqrt(sigma_r^1/2 sigma_g sigma_r^1/2))."""
    mu_r, mu_g = np.atleast_1d(mu_r).astype(np.float64), np.atleast_1d(mu_g).astype(np.float64)
    sigma_r, sigma_g = np.atleast_2d(sigma_r).astype(np.float64), np.atleast_2d(sigma_g).astype(np.float64)
    if mu_r.shape != mu_g.shape or sigma_r.shape != sigma_g.shape or sigma_r.shape[0] != mu_r.shape[0]:
        raise UsageError(f"Frechet distance dimension mismatch: {mu_r.shape}/{sigma_r.shape} vs {mu_g.shape}/{sigma_g.shape}")
    root_r = matrix_sqrt_psd(sigma_r)
    inner = root_r @ sigma_g @ root_r
    cross = matrix_sqrt_psd((inner + inner.T) / 2.0)
    diff = mu_r - mu_g
    return float(diff @ diff + np.trace(sigma_r) + np.trace(sigma_g) - 2.0 * np.trace(cross))


def fid_score(real: FeatureSet, gen: FeatureSet) -> float:
    """
    FID with the symmetrised cross term. tr sqrt(sigma_r^1/2 sigma_g sigma_r^1/2)
    equals the nuclear norm of Xg Xr^T / sqrt((n_g - 1)(n_r - 1)) for centred
    feature matrices, which is exact and keeps FID(A, A) at round-off level.
    """
    if real.dim != gen.dim:
        raise UsageError(f"feature dimensions differ: {real.dim} vs {gen.dim}")
    xr = real.features - real.mean()
    xg = gen.features - gen.mean()
    cross = np.sum(scipy.linalg.svdvals(xg @ xr.T)) / math.sqrt((gen.n - 1) * (real.n - 1))
    tr_r = np.sum(xr * xr) / (real.n - 1)
    tr_g = np.sum(xg * xg) / (gen.n - 1)
    diff = real.mean() - gen.mean()
    return float(diff @ diff + tr_r + tr_g - 2.0 * cross)


# -------------------------
# Features
# -------------------------
def _stack(images) -> List[np.ndarray]:
    if isinstance(images, np.ndarray) and images.ndim == 4:
        return [images[i:i + 1] for i in range(images.shape[0])]
    return [np.asarray(im).reshape((1,) + np.asarray(im).shape[-3:]) for im in images]


def extract_features(images, Q: PolicyClassifier, threads: int = 1) -> FeatureSet:
    """Pooled final-block features of Q per image, in input order (d = final block width)."""
    batch = _stack(images)

    def one(im: np.ndarray) -> np.ndarray:
        return Q.forward(Q.as_input(im).detach()).features.data[0, :, 0, 0].astype(np.float64)

    was_training = Q.training
    Q.eval()
    try:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(one, batch))
        else:
            rows = [one(im) for im in batch]
    finally:
        Q.training = was_training
    feats = FeatureSet(np.stack(rows))
    if feats.features.var(axis=0).max() < LOW_VARIANCE:
        LOG.warning("near-zero feature variance over %d images: is the classifier trained?", feats.n)
    return feats


def roi_abs_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"roi_abs_diff needs identical shapes, got {a.shape} and {b.shape}")
    return np.abs(a - b)


def roi_image(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|a - b| in [0, 2] shifted to the classifier's [-1, 1] input range."""
    return roi_abs_diff(a, b) - 1.0


def roi_fid(inputs: Sequence[np.ndarray], ground_truths: Sequence[np.ndarray], generated: Sequence[np.ndarray],
            Q: PolicyClassifier, threads: int = 1) -> float:
    """FID between {|x - y|} and {|x - y_hat|}."""
    if not (len(inputs) == len(ground_truths) == len(generated)):
        raise UsageError("roi_fid needs aligned (x, y, y_hat) triples")
    real = extract_features([roi_image(x, y) for x, y in zip(inputs, ground_truths)], Q, threads)
    gen = extract_features([roi_image(x, g) for x, g in zip(inputs, generated)], Q, threads)
    return fid_score(real, gen)


def policy_prob_mse(Q: PolicyClassifier, ground_truths: Sequence[np.ndarray], generated: Sequence[np.ndarray]) -> float:
    """Mean over samples and classes of (Q(y_hat) - Q(y))^2."""
    if len(ground_truths) != len(generated):
        raise UsageError("policy_prob_mse needs aligned image lists")
    p_true = np.concatenate([Q.predict_probs(y) for y in _stack(ground_truths)]).astype(np.float64)
    p_gen = np.concatenate([Q.predict_probs(g) for g in _stack(generated)]).astype(np.float64)
    return float(np.mean((p_gen - p_true) ** 2))


# -------------------------
# Report
# -------------------------
@dataclass
class EvalReport:
    fid: float
    roi_fid: float
    policy_mse: float
    ce: float
    accuracy: float
    n_samples: int
    per_class_accuracy: Dict[int, float] = field(default_factory=dict)
    feature_source: str = FEATURE_SOURCE
    generated_source: str = "model"
    split: str = "test"
    attention_roi_hit_rate: Optional[float] = None

    def to_lines(self) -> List[str]:
        lines = [
            f"feature_source\t{self.feature_source}",
            "roi_pairing\t|x-y| vs |x-y_hat|",
            f"generated_source\t{self.generated_source}",
            f"split\t{self.split}",
            f"n_samples\t{self.n_samples}",
            f"fid\t{self.fid:.6f}",
            f"roi_fid\t{self.roi_fid:.6f}",
            f"policy_mse\t{self.policy_mse:.8f}",
            f"ce\t{self.ce:.6f}",
            f"accuracy\t{self.accuracy:.6f}",
        ]
        for cid, acc in sorted(self.per_class_accuracy.items()):
            lines.append(f"accuracy_class_{cid}\t{acc:.6f}")
        if self.attention_roi_hit_rate is not None:
            lines.append(f"attention_roi_hit_rate\t{self.attention_roi_hit_rate:.6f}")
        return lines

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in (self.fid, self.roi_fid, self.policy_mse, self.ce, self.accuracy))


def classifier_scores(Q: PolicyClassifier, samples: Sequence[PairedSample]):
    """(ce, accuracy, per-class accuracy) over before-images (label m) and after-images (null class)."""
    ce, hits = [], []
    per_class: Dict[int, List[int]] = {}
    for s in samples:
        for image, label in ((s.x, s.m), (s.y, NULL_CLASS)):
            p = Q.predict_probs(image)[0].astype(np.float64)
            ce.append(-math.log(max(p[label - 1], 1e-12)))
            hit = int(np.argmax(p) + 1 == label)
            hits.append(hit)
            per_class.setdefault(label, []).append(hit)
    return float(np.mean(ce)), float(np.mean(hits)), {c: float(np.mean(v)) for c, v in per_class.items()}


def generate_images(bundle: ModelBundle, samples: Sequence[PairedSample], source: str = "model",
                    seed: int = 0) -> List[np.ndarray]:
    if source not in GENERATED_SOURCES:
        raise UsageError(f"unknown generated source '{source}', expected one of {GENERATED_SOURCES}")
    if source == "identity":
        return [s.x for s in samples]
    if source == "ground_truth":
        return [s.y for s in samples]
    G = bundle.generator.eval()
    rng = np.random.default_rng([seed, EVAL_NOISE_STREAM])
    return [G.forward(s.x, rng=rng).data for s in samples]


def attention_hit_rate(Q: PolicyClassifier, samples: Sequence[PairedSample], layer: int = -1) -> Optional[float]:
    """Share of samples whose mean attention (for the true class) is higher inside the ROI than outside."""
    with_roi = [s for s in samples if s.roi is not None]
    if not with_roi:
        return None
    hits = 0
    for s in with_roi:
        amap = gradcam_map(Q, s.x, class_id=s.m, layer=layer)
        hits += int(amap.mean_inside(s.roi) > amap.mean_outside(s.roi))
    return hits / len(with_roi)


def evaluate_samples(bundle: ModelBundle, samples: Sequence[PairedSample], generated: str = "model",
                     split: str = "test", seed: int = 0, threads: int = 1, with_attention: bool = True,
                     gradcam_layer: int = -1) -> EvalReport:
    if not samples:
        raise DataError(f"split '{split}' is empty")
    if len(samples) < 2:
        raise DataError(f"split '{split}' has 1 sample; FID needs at least 2")
    Q, G = bundle.classifier, bundle.generator
    modes = (Q.training, G.training)
    Q.eval()
    try:
        xs = [s.x for s in samples]
        ys = [s.y for s in samples]
        y_hats = generate_images(bundle, samples, generated, seed)
        fid = fid_score(extract_features(ys, Q, threads), extract_features(y_hats, Q, threads))
        rfid = roi_fid(xs, ys, y_hats, Q, threads)
        mse = policy_prob_mse(Q, ys, y_hats)
        ce, acc, per_class = classifier_scores(Q, samples)
        hit_rate = attention_hit_rate(Q, samples, gradcam_layer) if with_attention else None
    finally:
        Q.training, G.training = modes
    report = EvalReport(
        fid=fid, roi_fid=rfid, policy_mse=mse, ce=ce, accuracy=acc, n_samples=len(samples),
        per_class_accuracy=per_class, generated_source=generated, split=split,
        attention_roi_hit_rate=hit_rate,
    )
    LOG.info("[EVAL] split=%s generated=%s fid=%.4f roi_fid=%.4f mse=%.6f ce=%.4f acc=%.3f",
             split, generated, fid, rfid, mse, ce, acc)
    return report

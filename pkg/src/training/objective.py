# src/training/objective.py
"""
Adversarial objective with the difference-image term, L1 reconstruction and
the policy cross-entropy.

Discriminator objective (maximised by D):
    log D(x, y) + log D(x, |x - y|) + log(1 - D(x, y_hat))
Generator step (minimised by G), non-saturating:
    -log D(x, y_hat) + w * mean|y - y_hat|
"""
from dataclasses import asdict, dataclass
from typing import Dict, Tuple

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.errors import ConfigError, ShapeError, UsageError

DIFF_WIRINGS = ("d_only", "generator_too")


@dataclass
class DiscriminatorTerms:
    real: Tensor
    diff: Tensor
    fake: Tensor

    def objective(self) -> Tensor:
        return self.real + self.diff + self.fake


@dataclass
class LossBreakdown:
    d_loss_real: float
    d_loss_diff: float
    d_loss_fake: float
    g_adv_loss: float
    l1_loss: float
    policy_ce: float
    total_g: float
    total_d: float
    w: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in asdict(self).values())


def _check_same(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what} needs identical shapes, got {a.shape} and {b.shape}")


def discriminator_objective(D, x: Tensor, y: Tensor, y_hat: Tensor) -> DiscriminatorTerms:
    """The three log terms of D's objective. y_hat is detached: this objective only trains D."""
    _check_same(x, y, "discriminator objective")
    _check_same(x, y_hat, "discriminator objective")
    real = ops.mean(ops.log(D.score(x, y)))
    diff = ops.mean(ops.log(D.score(x, ops.abs_(ops.sub(x, y)))))
    fake = ops.mean(ops.log(1.0 - D.score(x, y_hat.detach())))
    return DiscriminatorTerms(real, diff, fake)


def generator_adversarial(D, x: Tensor, y_hat: Tensor, diff_wiring: str = "d_only") -> Tensor:
    """Non-saturating -log D(x, y_hat); with generator_too also -log D(x, |x - y_hat|)."""
    if diff_wiring not in DIFF_WIRINGS:
        raise ConfigError(f"unknown diff_wiring '{diff_wiring}', expected one of {DIFF_WIRINGS}", key="diff_wiring")
    loss = -ops.mean(ops.log(D.score(x, y_hat)))
    if diff_wiring == "generator_too":
        loss = loss - ops.mean(ops.log(D.score(x, ops.abs_(ops.sub(x, y_hat)))))
    return loss


def loss_cgan(D, x: Tensor, y: Tensor, y_hat: Tensor, diff_wiring: str = "d_only") -> Tuple[DiscriminatorTerms, Tensor]:
    return discriminator_objective(D, x, y, y_hat), generator_adversarial(D, x, y_hat, diff_wiring)


def loss_policy(pred_probs, label: int) -> Tensor:
    """-log p[label] for a 1-based class label. pred_probs: (1, N, 1, 1) tensor or length-N vector."""
    probs = pred_probs if isinstance(pred_probs, Tensor) else Tensor(np.asarray(pred_probs, dtype=np.float64).reshape(1, -1, 1, 1))
    n = probs.shape[1]
    if isinstance(label, (bool, np.bool_)) or not isinstance(label, (int, np.integer)) or not 1 <= label <= n:
        raise UsageError(f"policy label {label!r} outside 1..{n}")
    return -ops.mean(ops.log(ops.slice_channels(probs, int(label) - 1, int(label))))


def loss_l1(y: Tensor, y_hat: Tensor) -> Tensor:
    _check_same(y, y_hat, "loss_l1")
    return ops.mean(ops.abs_(ops.sub(y, y_hat)))


def loss_total(d_terms: DiscriminatorTerms, g_adv: Tensor, l1: Tensor, w: float,
               policy_ce: float = float("nan")) -> Tuple[LossBreakdown, Tensor]:
    """Assemble the breakdown and the differentiable total_g. policy_ce is reported, never mixed in."""
    if w < 0:
        raise ConfigError(f"L1 weight w must be >= 0, got {w}", key="w")
    total_g = g_adv + l1 * float(w)
    real, diff, fake = d_terms.real.item(), d_terms.diff.item(), d_terms.fake.item()
    breakdown = LossBreakdown(
        d_loss_real=real,
        d_loss_diff=diff,
        d_loss_fake=fake,
        g_adv_loss=g_adv.item(),
        l1_loss=l1.item(),
        policy_ce=float(policy_ce),
        total_g=total_g.item(),
        total_d=-(real + diff + fake),
        w=float(w),
    )
    return breakdown, total_g

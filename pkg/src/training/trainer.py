# src/training/trainer.py
"""
The ensemble schedule: G/D adversarial phase, then the policy classifier phase.

Determinism: networks are initialised from the run seed (see bundle_from_config) and
every random draw during training (flip coins, noise z, classifier order)
comes from one generator seeded with [seed, 99] that is owned by this module
and checkpointed with the weights, so a resumed run continues bit-exactly.
"""
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from src.autodiff.tensor import Tensor, backward
from src.config import TrainConfig
from src.data.dataset import NULL_CLASS, PairedDataset, PairedSample, augment_hflip
from src.errors import DataError, UsageError
from src.networks.checkpoint import ModelBundle, bundle_from_config, load_checkpoint, save_checkpoint
from src.networks.classifier import PolicyClassifier
from src.networks.discriminator import Discriminator
from src.networks.generator import Generator
from src.training.objective import (
    LossBreakdown, discriminator_objective, generator_adversarial, loss_l1, loss_policy, loss_total,
)
from src.training.optimizer import OptimizerState, adam_step, lr_schedule
from src.utils.logging_utils import get_logger

LOG = get_logger("trainer")

METRIC_COLUMNS = ["epoch", "lr", "d_loss_real", "d_loss_diff", "d_loss_fake", "g_adv_loss", "l1_loss", "policy_ce"]
TRAIN_STREAM = 99
HELD_OUT_STREAM = 7
HELD_OUT_MAX = 16


@dataclass
class GanEpochStats:
    epoch: int
    lr: float
    losses: Dict[str, float]
    skipped_steps: int
    n_samples: int

    def log_row(self) -> List[float]:
        l = self.losses
        return [self.epoch, self.lr, l["d_loss_real"], l["d_loss_diff"], l["d_loss_fake"],
                l["g_adv_loss"], l["l1_loss"], float("nan")]


@dataclass
class ClassifierEpochStats:
    epoch: int
    lr: float
    ce: float
    accuracy: float
    skipped_steps: int
    n_samples: int

    def log_row(self) -> List[float]:
        nan = float("nan")
        return [self.epoch, self.lr, nan, nan, nan, nan, nan, self.ce]


@dataclass
class TrainingResult:
    bundle: ModelBundle
    out_dir: str
    metrics_path: str
    final_checkpoint: str
    summary: Dict[str, float] = field(default_factory=dict)


def format_row(values: Sequence[float]) -> str:
    out = [str(int(values[0]))]
    for v in values[1:]:
        out.append("nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.8g}")
    return "\t".join(out)


# -------------------------
# GAN phase
# -------------------------
def train_gan_epoch(G: Generator, D: Discriminator, data: Sequence[PairedSample], config: TrainConfig,
                    epoch: int, rng: np.random.Generator, opt_g: OptimizerState, opt_d: OptimizerState,
                    progress: bool = False) -> GanEpochStats:
    """One pass in manifest order: per sample one D step, then one G step."""
    if not data:
        raise UsageError("train_gan_epoch needs a non-empty dataset")
    lr = lr_schedule(epoch, config)
    G.train()
    D.train()
    sums: Dict[str, float] = {}
    skipped_before = opt_g.skipped + opt_d.skipped
    for sample in tqdm(data, desc=f"gan {epoch}", disable=not progress, leave=False):
        sample = augment_hflip(sample, bool(rng.random() < config.flip_probability))
        x, y = Tensor(sample.x), Tensor(sample.y)
        z = G.sample_noise(sample.x.shape, rng)
        y_hat = G.forward(x, z=z)

        # D ascends its objective: minimise the negation
        D.zero_grad()
        terms = discriminator_objective(D, x, y, y_hat)
        backward(-terms.objective())
        adam_step(D.parameters(), opt_d, lr)

        G.zero_grad()
        D.zero_grad()
        g_adv = generator_adversarial(D, x, y_hat, config.diff_wiring)
        l1 = loss_l1(y, y_hat)
        breakdown, total_g = loss_total(terms, g_adv, l1, config.w)
        backward(total_g)
        adam_step(G.parameters(), opt_g, lr)
        D.zero_grad()

        for k, v in breakdown.as_dict().items():
            sums[k] = sums.get(k, 0.0) + v
    n = len(data)
    stats = GanEpochStats(epoch, lr, {k: v / n for k, v in sums.items()},
                          opt_g.skipped + opt_d.skipped - skipped_before, n)
    LOG.info("[GAN] epoch=%d lr=%.3g d_total=%.4f g_adv=%.4f l1=%.4f skipped=%d", epoch, lr,
             stats.losses["total_d"], stats.losses["g_adv_loss"], stats.losses["l1_loss"], stats.skipped_steps)
    return stats


# -------------------------
# Classifier phase
# -------------------------
def classifier_samples(data: Sequence[PairedSample], n_classes: int = NULL_CLASS) -> List[tuple]:
    """(image, label, record) per before-image (label m) and per after-image (null class)."""
    out = []
    for s in data:
        if isinstance(s.m, (bool, np.bool_)) or not isinstance(s.m, (int, np.integer)) or not 1 <= s.m <= n_classes:
            raise DataError(f"policy label {s.m!r} outside 1..{n_classes}", row=s.pair_id + 1 if s.pair_id >= 0 else None)
        out.append((s, "x", int(s.m)))
        out.append((s, "y", NULL_CLASS))
    return out


def train_classifier_epochs(Q: PolicyClassifier, data: Sequence[PairedSample], config: TrainConfig,
                            rng: np.random.Generator, opt_q: OptimizerState, epochs: int = None,
                            start_epoch: int = 0, progress: bool = False,
                            on_epoch=None) -> List[ClassifierEpochStats]:
    """Minimise the policy cross-entropy with Adam at the constant classifier lr."""
    if not data:
        raise UsageError("classifier training needs a non-empty dataset")
    items = classifier_samples(data, Q.spec.n_classes)
    epochs = config.classifier_epochs if epochs is None else epochs
    lr = config.q_lr
    history = []
    for k in range(epochs):
        Q.train()
        ce_sum, correct = 0.0, 0
        skipped_before = opt_q.skipped
        order = rng.permutation(len(items))
        for idx in tqdm(order, desc=f"classifier {start_epoch + k}", disable=not progress, leave=False):
            sample, which, label = items[idx]
            sample = augment_hflip(sample, bool(rng.random() < config.flip_probability))
            image = sample.x if which == "x" else sample.y
            Q.zero_grad()
            out = Q.forward(Tensor(image))
            ce = loss_policy(out.probs, label)
            backward(ce)
            adam_step(Q.parameters(), opt_q, lr)
            ce_sum += ce.item()
            correct += int(np.argmax(out.probs.data[0, :, 0, 0]) + 1 == label)
        stats = ClassifierEpochStats(start_epoch + k, lr, ce_sum / len(items), correct / len(items),
                                     opt_q.skipped - skipped_before, len(items))
        LOG.info("[CLASSIFIER] epoch=%d lr=%.3g ce=%.4f acc=%.3f skipped=%d",
                 stats.epoch, lr, stats.ce, stats.accuracy, stats.skipped_steps)
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    Q.eval()
    return history


# -------------------------
# Held-out generator L1
# -------------------------
def held_out_l1(G: Generator, samples: Sequence[PairedSample], seed: int) -> float:
    """Mean L1 of G on up to HELD_OUT_MAX held-out samples with a fixed noise stream."""
    if not samples:
        return float("nan")
    rng = np.random.default_rng([seed, HELD_OUT_STREAM])
    was_training = G.training
    G.eval()
    try:
        vals = []
        for s in samples[:HELD_OUT_MAX]:
            y_hat = G.forward(Tensor(s.x), z=G.sample_noise(s.x.shape, rng))
            vals.append(float(np.mean(np.abs(s.y - y_hat.data))))
    finally:
        G.training = was_training
    return float(np.mean(vals))


# -------------------------
# Full run
# -------------------------
class _RunState:
    """Optimizers, rng and bookkeeping that a checkpoint must restore."""

    def __init__(self, config: TrainConfig):
        self.opt_g = OptimizerState.from_config(config)
        self.opt_d = OptimizerState.from_config(config)
        self.opt_q = OptimizerState.from_config(config)
        self.rng = np.random.default_rng([config.seed, TRAIN_STREAM])
        self.epochs_done = 0
        self.rows: List[str] = []
        self.held_out_init = float("nan")

    def metadata(self, config: TrainConfig) -> Dict:
        return {
            "epochs_done": self.epochs_done,
            "gan_epochs": config.gan_epochs,
            "classifier_epochs": config.classifier_epochs,
            "config": config.model_dump(mode="json"),
            "opt_t": {"g": self.opt_g.t, "d": self.opt_d.t, "q": self.opt_q.t},
            "opt_skipped": {"g": self.opt_g.skipped, "d": self.opt_d.skipped, "q": self.opt_q.skipped},
            "rng_state": self.rng.bit_generator.state,
            "metrics_rows": list(self.rows),
            "held_out_l1_init": self.held_out_init,
        }

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        out.update(self.opt_g.export_arrays("opt_g"))
        out.update(self.opt_d.export_arrays("opt_d"))
        out.update(self.opt_q.export_arrays("opt_q"))
        return out

    def restore(self, bundle: ModelBundle):
        meta = bundle.metadata
        t, skipped = meta["opt_t"], meta["opt_skipped"]
        self.opt_g.import_arrays(bundle.extra_arrays, "opt_g", t["g"], skipped["g"])
        self.opt_d.import_arrays(bundle.extra_arrays, "opt_d", t["d"], skipped["d"])
        self.opt_q.import_arrays(bundle.extra_arrays, "opt_q", t["q"], skipped["q"])
        self.rng.bit_generator.state = meta["rng_state"]
        self.epochs_done = int(meta["epochs_done"])
        self.rows = list(meta.get("metrics_rows", []))
        self.held_out_init = float(meta.get("held_out_l1_init", float("nan")))


def _snapshot(bundle: ModelBundle, run: _RunState, config: TrainConfig, path: str):
    bundle.metadata = run.metadata(config)
    bundle.extra_arrays = run.arrays()
    save_checkpoint(bundle, path)


def _write_metrics(path: str, rows: List[str]):
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(METRIC_COLUMNS) + "\n")
        for r in rows:
            f.write(r + "\n")


def latest_checkpoint(out_dir: str) -> Optional[str]:
    if not os.path.isdir(out_dir):
        return None
    ckpts = sorted(f for f in os.listdir(out_dir) if f.startswith("ckpt_epoch_") and f.endswith(".dgan"))
    return os.path.join(out_dir, ckpts[-1]) if ckpts else None


def run_training(config: TrainConfig, dataset: PairedDataset, out_dir: str, resume: str = None,
                 progress: bool = False) -> TrainingResult:
    """
    GAN phase (gan_epochs), then classifier phase (classifier_epochs), checkpointing
    every checkpoint_every epochs (epochs are numbered continuously across phases).
    Writes metrics.tsv, ckpt_epoch_XXXX.dgan, model_final.dgan and training_summary.txt.
    """
    train = dataset.split("train")
    if not train:
        raise DataError("training split is empty")
    held_out = dataset.held_out()
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.tsv")
    total_epochs = config.gan_epochs + config.classifier_epochs

    run = _RunState(config)
    if resume:
        bundle = load_checkpoint(resume)
        run.restore(bundle)
        LOG.info("resuming from %s at epoch %d", resume, run.epochs_done)
    else:
        bundle = bundle_from_config(config)
        run.held_out_init = held_out_l1(bundle.generator, held_out, config.seed)
    G, D, Q = bundle.generator, bundle.discriminator, bundle.classifier

    def after_epoch(stats):
        run.rows.append(format_row(stats.log_row()))
        run.epochs_done = stats.epoch + 1
        _write_metrics(metrics_path, run.rows)
        if run.epochs_done % config.checkpoint_every == 0 or run.epochs_done == config.gan_epochs:
            _snapshot(bundle, run, config, os.path.join(out_dir, f"ckpt_epoch_{run.epochs_done:04d}.dgan"))

    for epoch in range(run.epochs_done, config.gan_epochs):
        after_epoch(train_gan_epoch(G, D, train, config, epoch, run.rng, run.opt_g, run.opt_d, progress))

    q_start = max(run.epochs_done, config.gan_epochs)
    q_history = train_classifier_epochs(Q, train, config, run.rng, run.opt_q, epochs=total_epochs - q_start,
                                        start_epoch=q_start, progress=progress, on_epoch=after_epoch)

    held_out_final = held_out_l1(G, held_out, config.seed)
    G.eval()
    D.eval()
    Q.eval()
    final_path = os.path.join(out_dir, "model_final.dgan")
    _snapshot(bundle, run, config, final_path)

    summary = {
        "seed": config.seed,
        "gan_epochs": config.gan_epochs,
        "classifier_epochs": config.classifier_epochs,
        "held_out_l1_init": run.held_out_init,
        "held_out_l1_final": held_out_final,
        "held_out_l1_reduction": 1.0 - held_out_final / run.held_out_init if run.held_out_init else float("nan"),
        "classifier_train_accuracy": q_history[-1].accuracy if q_history else float("nan"),
        "classifier_train_ce": q_history[-1].ce if q_history else float("nan"),
        "skipped_steps_g": run.opt_g.skipped,
        "skipped_steps_d": run.opt_d.skipped,
        "skipped_steps_q": run.opt_q.skipped,
        "n_train_pairs": len(train),
        "n_held_out_pairs": len(held_out),
    }
    with open(os.path.join(out_dir, "training_summary.txt"), "w", encoding="utf-8") as f:
        for k, v in summary.items():
            f.write(f"{k}={v}\n")
    LOG.info("training finished: held-out L1 %.4f -> %.4f", run.held_out_init, held_out_final)
    return TrainingResult(bundle, out_dir, metrics_path, final_path, summary)

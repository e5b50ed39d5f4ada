# src/training/optimizer.py
from dataclasses import dataclass, field
from typing import Dict, Iterable, Tuple

import numpy as np

from src.autodiff.tensor import Tensor
from src.config import TrainConfig
from src.utils.logging_utils import get_logger

LOG = get_logger("optimizer")

ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    """Adam moments per parameter name plus the shared step counter."""
    beta1: float
    beta2: float
    eps: float = ADAM_EPS
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    skipped: int = 0

    @classmethod
    def from_config(cls, config: TrainConfig) -> "OptimizerState":
        return cls(beta1=config.beta1, beta2=config.beta2)

    def export_arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"{prefix}.{name}.m"] = self.m[name]
            out[f"{prefix}.{name}.v"] = self.v[name]
        return out

    def import_arrays(self, arrays: Dict[str, np.ndarray], prefix: str, t: int, skipped: int = 0):
        self.t, self.skipped = t, skipped
        for key, arr in arrays.items():
            if not key.startswith(prefix + "."):
                continue
            name, moment = key[len(prefix) + 1:].rsplit(".", 1)
            (self.m if moment == "m" else self.v)[name] = arr.copy()


def adam_step(params: Iterable[Tuple[str, Tensor]], state: OptimizerState, lr: float) -> bool:
    """
    One bias-corrected Adam update from each parameter's .grad.

    If any gradient is non-finite the whole step is rejected (no parameter or
    moment changes, t unchanged) and state.skipped is incremented. Returns
    whether the step was applied.
    """
    params = [(name, p) for name, p in params if p.requires_grad]
    grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params}
    shapes = {name: p.shape for name, p in params}
    for name, g in grads.items():
        if g.shape != shapes[name]:
            raise ValueError(f"gradient for '{name}' has shape {g.shape}, parameter has {shapes[name]}")
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            LOG.warning("skipping Adam step %d: non-finite gradient for '%s'", state.t + 1, name)
            return False

    state.t += 1
    b1, b2, t = state.beta1, state.beta2, state.t
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params:
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m.astype(p.dtype), v.astype(p.dtype)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        # new array: graphs still referencing the old weights stay valid
        p.data = (p.data - update).astype(p.dtype)
    return True


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """lr0 up to decay_start, then linear to exactly 0 at gan_epochs."""
    total, start = config.gan_epochs, config.decay_start
    e = min(max(epoch, 0), total)
    if e <= start:
        return config.lr0
    return config.lr0 * ((total - e) / (total - start))

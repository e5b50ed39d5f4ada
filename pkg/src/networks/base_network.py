# src/networks/base_network.py
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, Tuple

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor, as_tensor, parameter
from src.errors import CheckpointError
from src.utils.logging_utils import get_logger

LOG = get_logger("networks")

INIT_STD = 0.02


@dataclass
class NetworkDescriptor:
    """What a checkpoint needs to rebuild a network: its kind and its spec fields."""
    network_type: str
    spec: Dict[str, Any] = field(default_factory=dict)


class BaseNetwork:
    """
    Named parameters, normalisation buffers and a train/eval switch.

    Parameters are created in a fixed order from an rng seeded by the caller, so
    two builds with the same seed are bit-identical.
    """

    def __init__(self, network_id: str, network_type: str, seed, dtype=np.float32):
        self.network_id = network_id
        self.network_type = network_type
        self.dtype = np.dtype(dtype)
        self.training = True
        self.params: Dict[str, Tensor] = {}
        self.buffers: Dict[str, ops.RunningStats] = {}
        self._rng = np.random.default_rng(seed)

    # override in networks
    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def descriptor(self) -> NetworkDescriptor:
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # -------------------------
    # Parameter creation
    # -------------------------
    def _add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name '{name}' in {self.network_id}")
        t = parameter(data.astype(self.dtype), name=name)
        self.params[name] = t
        return t

    def add_conv(self, name: str, in_channels: int, out_channels: int, k: int) -> Tuple[Tensor, Tensor]:
        w = self._add(f"{name}.weight", self._rng.normal(0.0, INIT_STD, size=(out_channels, in_channels, k, k)))
        b = self._add(f"{name}.bias", np.zeros((1, out_channels, 1, 1)))
        return w, b

    def add_dense(self, name: str, in_features: int, out_features: int, zero: bool = False) -> Tuple[Tensor, Tensor]:
        shape = (1, 1, in_features, out_features)
        data = np.zeros(shape) if zero else self._rng.normal(0.0, INIT_STD, size=shape)
        w = self._add(f"{name}.weight", data)
        b = self._add(f"{name}.bias", np.zeros((1, out_features, 1, 1)))
        return w, b

    def add_norm(self, name: str, channels: int) -> Tuple[Tensor, Tensor]:
        gamma = self._add(f"{name}.gamma", np.ones((1, channels, 1, 1)))
        beta = self._add(f"{name}.beta", np.zeros((1, channels, 1, 1)))
        self.buffers[name] = ops.RunningStats.create(channels, self.dtype)
        return gamma, beta

    def add_spade(self, name: str, channels: int, cond_channels: int = 3, k: int = 3) -> ops.SpadeModulation:
        wg, bg = self.add_conv(f"{name}.gamma", cond_channels, channels, k)
        wb, bb = self.add_conv(f"{name}.beta", cond_channels, channels, k)
        self.buffers[name] = ops.RunningStats.create(channels, self.dtype)
        return ops.SpadeModulation(wg, bg, wb, bb)

    # -------------------------
    # Modes / bookkeeping
    # -------------------------
    def train(self) -> "BaseNetwork":
        self.training = True
        return self

    def eval(self) -> "BaseNetwork":
        self.training = False
        return self

    def parameters(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.params.items())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def as_input(self, value) -> Tensor:
        t = as_tensor(value)
        return t if t.dtype == self.dtype else t.astype(self.dtype)

    # -------------------------
    # Serialisation helpers (used by checkpoint)
    # -------------------------
    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Parameters and running statistics as named arrays, in creation order."""
        out = {name: t.data for name, t in self.params.items()}
        for name, stats in self.buffers.items():
            out[f"{name}.running_mean"] = stats.mean
            out[f"{name}.running_var"] = stats.var
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], prefix: str = ""):
        for name, t in self.params.items():
            key = prefix + name
            if key not in arrays:
                raise CheckpointError(f"checkpoint has no array '{key}'")
            if arrays[key].shape != t.shape:
                raise CheckpointError(f"array '{key}' has shape {arrays[key].shape}, expected {t.shape}")
            t.data = arrays[key].astype(self.dtype).copy()
            t.zero_grad()
        for name, stats in self.buffers.items():
            for suffix, target in (("running_mean", stats.mean), ("running_var", stats.var)):
                key = f"{prefix}{name}.{suffix}"
                if key not in arrays:
                    raise CheckpointError(f"checkpoint has no array '{key}'")
                target[...] = arrays[key].reshape(target.shape).astype(target.dtype)
        LOG.debug("[%s] loaded %d parameters", self.network_id, len(self.params))

    def __repr__(self):
        mode = "train" if self.training else "eval"
        return f"{type(self).__name__}(id={self.network_id}, params={self.num_parameters()}, mode={mode})"

# src/networks/discriminator.py
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.errors import ConfigError
from src.networks.base_network import BaseNetwork, NetworkDescriptor
from src.networks.layers import batch_norm, conv_same, dense_head
from src.networks.generator import IMAGE_CHANNELS


class DiscriminatorSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    block_channels: Tuple[int, ...] = (128, 32, 16)
    kernels: Tuple[int, ...] = (3, 3, 1)
    input_channels: int = 2 * IMAGE_CHANNELS
    zero_init_head: bool = False

    @model_validator(mode="after")
    def _check(self):
        if len(self.block_channels) != 3 or len(self.kernels) != 3:
            raise ValueError("discriminator needs exactly 3 residual blocks")
        if any(k % 2 == 0 for k in self.kernels):
            raise ValueError("discriminator kernels must be odd")
        if self.input_channels != 2 * IMAGE_CHANNELS:
            raise ValueError("discriminator input is the condition concatenated with the candidate (6 channels)")
        return self


class Discriminator(BaseNetwork):
    """
    Residual down-sampling discriminator. Block: conv -> batch norm -> pool -> relu,
    plus a pooled 1x1 projection of the block input. Head: global average pool,
    dense(1), sigmoid; output is one probability per sample.
    """

    def __init__(self, spec: DiscriminatorSpec, seed: int, dtype=np.float32):
        super().__init__("discriminator", "D", seed, dtype)
        self.spec = spec
        in_ch = spec.input_channels
        for i, (ch, k) in enumerate(zip(spec.block_channels, spec.kernels)):
            self.add_conv(f"block{i}.conv", in_ch, ch, k)
            self.add_norm(f"block{i}.bn", ch)
            self.add_conv(f"block{i}.proj", in_ch, ch, 1)
            in_ch = ch
        self.add_dense("head", in_ch, 1, zero=spec.zero_init_head)

    def descriptor(self) -> NetworkDescriptor:
        return NetworkDescriptor("D", self.spec.model_dump(mode="json"))

    def forward(self, pair) -> Tensor:
        h = self.as_input(pair)
        if h.shape[1] != self.spec.input_channels:
            raise ConfigError(
                f"discriminator expects {self.spec.input_channels} input channels, got input {h.shape}")
        for i in range(len(self.spec.block_channels)):
            out = conv_same(self, f"block{i}.conv", h)
            out = batch_norm(self, f"block{i}.bn", out)
            out = ops.activation(ops.pool_max2(out), "relu")
            shortcut = ops.pool_max2(conv_same(self, f"block{i}.proj", h))
            h = ops.add_residual(out, shortcut)
        return ops.activation(dense_head(self, "head", ops.pool_global_avg(h)), "sigmoid")

    def score(self, condition, candidate) -> Tensor:
        """D(x, candidate) on the channel concatenation of the two images."""
        return self.forward(ops.concat_channels(self.as_input(condition), self.as_input(candidate)))


def build_discriminator(spec: DiscriminatorSpec = None, seed: int = 0, dtype=np.float32) -> Discriminator:
    return Discriminator(spec or DiscriminatorSpec(), seed, dtype)

# src/networks/generator.py
"""
U-Net generator G(x, z).

Encoder block j: conv -> SPADE(conditioned on x) -> pool_max2 -> leaky_relu.
Decoder block d: upsample2 -> conv -> SPADE -> leaky_relu, with the output of
encoder block j concatenated onto decoder block d's input for every skip pair.
A final kernel_outer conv maps to RGB and tanh bounds it to [-1, 1].
"""
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.errors import ConfigError, UsageError
from src.networks.base_network import BaseNetwork, NetworkDescriptor
from src.networks.layers import conv_same, spade_norm

IMAGE_CHANNELS = 3


class GeneratorSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    block_channels: Tuple[int, ...] = (128, 32, 16)
    kernel_inner: int = 3
    kernel_outer: int = 7
    noise_channels: int = 1
    # (encoder block j, decoder block d): encoder j's output joins decoder d's input
    skip_pairs: Tuple[Tuple[int, int], ...] = ((0, 2), (1, 1))

    @model_validator(mode="after")
    def _check(self):
        n = len(self.block_channels)
        if n != 3:
            raise ValueError(f"generator needs exactly 3 encoder blocks, got {n}")
        if self.kernel_inner % 2 == 0 or self.kernel_outer % 2 == 0:
            raise ValueError("generator kernels must be odd")
        if self.noise_channels < 0:
            raise ValueError("noise_channels must be >= 0")
        for j, d in self.skip_pairs:
            if not (0 <= j < n - 1 and 0 < d < n and j + d == n - 1):
                raise ValueError(f"skip pair ({j}, {d}) does not join matching resolutions")
        return self

    @property
    def decoder_channels(self) -> List[int]:
        return list(reversed(self.block_channels))

    @property
    def depth(self) -> int:
        return len(self.block_channels)


class Generator(BaseNetwork):
    # batch size is 1, so batch statistics are per-sample statistics; used at inference as well
    batch_stats_at_inference = True

    def __init__(self, spec: GeneratorSpec, seed: int, dtype=np.float32):
        super().__init__("generator", "G", seed, dtype)
        self.spec = spec
        enc = spec.block_channels
        skips = dict((d, j) for j, d in spec.skip_pairs)

        in_ch = IMAGE_CHANNELS + spec.noise_channels
        for j, ch in enumerate(enc):
            k = spec.kernel_outer if j == 0 else spec.kernel_inner
            self.add_conv(f"enc{j}.conv", in_ch, ch, k)
            self.add_spade(f"enc{j}.spade", ch, IMAGE_CHANNELS, spec.kernel_inner)
            in_ch = ch

        for d, ch in enumerate(spec.decoder_channels):
            if d in skips:
                in_ch += enc[skips[d]]
            self.add_conv(f"dec{d}.conv", in_ch, ch, spec.kernel_inner)
            self.add_spade(f"dec{d}.spade", ch, IMAGE_CHANNELS, spec.kernel_inner)
            in_ch = ch

        self.add_conv("out.conv", in_ch, IMAGE_CHANNELS, spec.kernel_outer)
        self._skips = skips

    def descriptor(self) -> NetworkDescriptor:
        return NetworkDescriptor("G", self.spec.model_dump(mode="json"))

    def sample_noise(self, shape, rng: np.random.Generator) -> np.ndarray:
        b, _, h, w = shape
        return rng.standard_normal((b, self.spec.noise_channels, h, w)).astype(self.dtype)

    def forward(self, x, z=None, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Map (x, z) to an image of x's resolution. z is drawn from rng when not given."""
        x = self.as_input(x)
        b, c, h, w = x.shape
        factor = 2 ** self.spec.depth
        if c != IMAGE_CHANNELS:
            raise ConfigError(f"generator expects {IMAGE_CHANNELS} image channels, got input {x.shape}")
        if h % factor or w % factor:
            raise ConfigError(f"generator input resolution {h}x{w} is not divisible by {factor}")

        h_in = x
        if self.spec.noise_channels:
            if z is None:
                if rng is None:
                    raise UsageError("generator forward needs either z or an rng to draw it from")
                z = self.sample_noise(x.shape, rng)
            z = self.as_input(z)
            if z.shape != (b, self.spec.noise_channels, h, w):
                raise ConfigError(f"noise shape {z.shape} does not match expected {(b, self.spec.noise_channels, h, w)}")
            h_in = ops.concat_channels(x, z)

        encoded = []
        out = h_in
        for j in range(self.spec.depth):
            out = conv_same(self, f"enc{j}.conv", out)
            out = spade_norm(self, f"enc{j}.spade", out, x)
            out = ops.activation(ops.pool_max2(out), "leaky_relu")
            encoded.append(out)

        for d in range(self.spec.depth):
            if d in self._skips:
                out = ops.concat_channels(out, encoded[self._skips[d]])
            out = ops.upsample2(out)
            out = conv_same(self, f"dec{d}.conv", out)
            out = spade_norm(self, f"dec{d}.spade", out, x)
            out = ops.activation(out, "leaky_relu")

        out = conv_same(self, "out.conv", out)
        return ops.activation(out, "tanh")


def build_generator(spec: GeneratorSpec = None, seed: int = 0, dtype=np.float32) -> Generator:
    return Generator(spec or GeneratorSpec(), seed, dtype)

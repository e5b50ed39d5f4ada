# src/networks/classifier.py
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.errors import ConfigError
from src.networks.base_network import BaseNetwork, NetworkDescriptor
from src.networks.generator import IMAGE_CHANNELS
from src.networks.layers import batch_norm, conv_same, dense_head

N_POLICY_CLASSES = 9


class ClassifierSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    block_channels: Tuple[int, ...] = (16, 32, 64, 128)
    convs_per_block: int = 2
    kernel: int = 3
    n_classes: int = N_POLICY_CLASSES

    @model_validator(mode="after")
    def _check(self):
        chans = self.block_channels
        if any(b != 2 * a for a, b in zip(chans, chans[1:])):
            raise ValueError(f"each classifier block must double the previous width, got {chans}")
        if self.convs_per_block != 2:
            raise ValueError("classifier blocks hold exactly two convolutions")
        if self.n_classes < 2:
            raise ValueError("classifier needs at least 2 classes")
        return self

    @property
    def feature_dim(self) -> int:
        return self.block_channels[-1]


@dataclass
class ClassifierOutput:
    logits: Tensor
    probs: Tensor
    blocks: List[Tensor]
    features: Tensor

    @property
    def final_block(self) -> Tensor:
        return self.blocks[-1]


class PolicyClassifier(BaseNetwork):
    """
    Four conv blocks: conv -> relu -> conv -> batch norm -> relu -> pool_max2.
    Head: global average pool -> dense(N) -> softmax over the class axis.
    """

    def __init__(self, spec: ClassifierSpec, seed: int, dtype=np.float32):
        super().__init__("policy_classifier", "Q", seed, dtype)
        self.spec = spec
        in_ch = IMAGE_CHANNELS
        for i, ch in enumerate(spec.block_channels):
            self.add_conv(f"block{i}.conv_a", in_ch, ch, spec.kernel)
            self.add_conv(f"block{i}.conv_b", ch, ch, spec.kernel)
            self.add_norm(f"block{i}.bn", ch)
            in_ch = ch
        self.add_dense("head", in_ch, spec.n_classes)

    def descriptor(self) -> NetworkDescriptor:
        return NetworkDescriptor("Q", self.spec.model_dump(mode="json"))

    def forward(self, image) -> ClassifierOutput:
        h = self.as_input(image)
        if h.shape[1] != IMAGE_CHANNELS:
            raise ConfigError(f"classifier expects {IMAGE_CHANNELS} channels, got input {h.shape}")
        blocks = []
        for i in range(len(self.spec.block_channels)):
            h = ops.activation(conv_same(self, f"block{i}.conv_a", h), "relu")
            h = batch_norm(self, f"block{i}.bn", conv_same(self, f"block{i}.conv_b", h))
            h = ops.pool_max2(ops.activation(h, "relu"))
            blocks.append(h)
        features = ops.pool_global_avg(h)
        logits = dense_head(self, "head", features)
        return ClassifierOutput(logits, ops.activation(logits, "softmax"), blocks, features)

    def predict_probs(self, image) -> np.ndarray:
        """(batch, N) probabilities in inference mode, without keeping a graph."""
        was_training = self.training
        self.eval()
        try:
            return self.forward(self.as_input(image).detach()).probs.data[:, :, 0, 0]
        finally:
            self.training = was_training


def build_policy_classifier(spec: ClassifierSpec = None, seed: int = 0, dtype=np.float32) -> PolicyClassifier:
    return PolicyClassifier(spec or ClassifierSpec(), seed, dtype)

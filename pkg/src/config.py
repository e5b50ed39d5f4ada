# src/config.py
"""
Configuration for DesignerGAN.

- TrainConfig: every optimisation hyperparameter plus desk-scale overrides.
  Parsed from flat key=value files whose keys match the field names exactly.
- RuntimeSettings: process-level knobs read from DGAN_* environment variables
  (and src/.env when present).
"""
import os
from typing import Dict, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.errors import ConfigError

BASE_DIR = os.path.dirname(os.path.abspath(__file__))
load_dotenv(dotenv_path=os.path.join(BASE_DIR, ".env"))

TUPLE_KEYS = ("split_ratios", "generator_channels", "discriminator_channels", "classifier_channels")

# desk preset widths; TrainConfig defaults are the full-scale networks
DESK_GENERATOR_CHANNELS = (32, 16, 8)
DESK_DISCRIMINATOR_CHANNELS = (32, 16, 8)
DESK_CLASSIFIER_CHANNELS = (8, 16, 32, 64)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr0: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.9
    batch_size: int = 1
    gan_epochs: int = 600
    classifier_epochs: int = 25
    decay_start: int = 200
    resolution: int = 64
    w: float = 100.0
    seed: int = 0
    checkpoint_every: int = 10
    # extensions
    diff_wiring: Literal["d_only", "generator_too"] = "d_only"
    noise_channels: int = 1
    flip_probability: float = 0.5
    split_ratios: Tuple[float, float, float] = (0.7, 0.15, 0.15)
    classifier_lr: Optional[float] = None
    generator_channels: Tuple[int, int, int] = (128, 32, 16)
    discriminator_channels: Tuple[int, int, int] = (128, 32, 16)
    classifier_channels: Tuple[int, int, int, int] = (16, 32, 64, 128)
    # Q block whose activations feed Grad-CAM; negative counts from the last
    gradcam_layer: int = -1

    @field_validator("lr0")
    @classmethod
    def _positive_lr(cls, v):
        if not v > 0:
            raise ValueError("lr0 must be > 0")
        return v

    @field_validator("beta1", "beta2")
    @classmethod
    def _beta_range(cls, v):
        if not 0 <= v < 1:
            raise ValueError("betas must lie in [0, 1)")
        return v

    @field_validator("batch_size")
    @classmethod
    def _batch_of_one(cls, v):
        if v != 1:
            raise ValueError("only batch_size=1 is supported")
        return v

    @field_validator("w")
    @classmethod
    def _non_negative_w(cls, v):
        if v < 0:
            raise ValueError("L1 weight w must be >= 0")
        return v

    @field_validator("seed")
    @classmethod
    def _u64_seed(cls, v):
        if not 0 <= v < 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        return v

    @field_validator("resolution")
    @classmethod
    def _divisible_resolution(cls, v):
        if v <= 0 or v % 8:
            raise ValueError("resolution must be a positive multiple of 8")
        if v % 16:
            raise ValueError("resolution must be a multiple of 16 (the policy classifier pools four times)")
        return v

    @field_validator("gan_epochs", "classifier_epochs", "checkpoint_every")
    @classmethod
    def _positive_int(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("noise_channels")
    @classmethod
    def _non_negative_noise(cls, v):
        if v < 0:
            raise ValueError("must be >= 0 (0 disables the noise input)")
        return v

    @field_validator("generator_channels", "discriminator_channels", "classifier_channels")
    @classmethod
    def _positive_widths(cls, v):
        if any(c < 1 for c in v):
            raise ValueError("channel widths must be >= 1")
        return v

    @field_validator("classifier_channels")
    @classmethod
    def _doubling_widths(cls, v):
        if any(b != 2 * a for a, b in zip(v, v[1:])):
            raise ValueError("each classifier block must double the previous width")
        return v

    @field_validator("flip_probability")
    @classmethod
    def _probability(cls, v):
        if not 0 <= v <= 1:
            raise ValueError("must lie in [0, 1]")
        return v

    @field_validator("split_ratios")
    @classmethod
    def _ratios(cls, v):
        if any(r < 0 for r in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("split ratios must be non-negative and sum to 1")
        return v

    @model_validator(mode="after")
    def _decay_before_end(self):
        if not 0 <= self.decay_start < self.gan_epochs:
            raise ValueError("decay_start must satisfy 0 <= decay_start < gan_epochs")
        return self

    @model_validator(mode="after")
    def _gradcam_layer_in_range(self):
        n = len(self.classifier_channels)
        if not -n <= self.gradcam_layer < n:
            raise ValueError(f"gradcam_layer must lie in [-{n}, {n - 1}] for {n} classifier blocks")
        return self

    @property
    def q_lr(self) -> float:
        return self.classifier_lr if self.classifier_lr is not None else self.lr0

    def to_lines(self) -> str:
        """Serialise in the key=value file format."""
        out = []
        for k, v in self.model_dump().items():
            if v is None:
                continue
            if isinstance(v, (tuple, list)):
                v = ",".join(repr(x) for x in v)
            out.append(f"{k}={v}")
        return "\n".join(out) + "\n"


class RuntimeSettings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="DGAN_", extra="ignore")

    threads: int = Field(default=1, ge=1)
    log_level: str = "INFO"


def build_train_config(values: Dict[str, object]) -> TrainConfig:
    """Validate raw values into a TrainConfig, mapping pydantic failures to ConfigError naming the key."""
    try:
        return TrainConfig(**values)
    except ValidationError as e:
        err = e.errors()[0]
        key = str(err["loc"][0]) if err.get("loc") else None
        if err.get("type") == "extra_forbidden":
            raise ConfigError(f"unknown config key '{key}'", key=key) from None
        raise ConfigError(f"invalid value for '{key}': {err.get('msg')}" if key else err.get("msg"), key=key) from None


def parse_config_text(text: str) -> TrainConfig:
    values: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got '{line}'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in TrainConfig.model_fields:
            raise ConfigError(f"unknown config key '{key}'", key=key)
        if key in values:
            raise ConfigError(f"duplicate config key '{key}'", key=key)
        if key in TUPLE_KEYS:
            values[key] = tuple(s.strip() for s in val.split(","))
        else:
            values[key] = val
    return build_train_config(values)


def load_config(path: str) -> TrainConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())


def desk_preset(**overrides) -> TrainConfig:
    base = dict(resolution=64, gan_epochs=60, classifier_epochs=5, decay_start=20, checkpoint_every=10,
                generator_channels=DESK_GENERATOR_CHANNELS, discriminator_channels=DESK_DISCRIMINATOR_CHANNELS,
                classifier_channels=DESK_CLASSIFIER_CHANNELS)
    base.update(overrides)
    return build_train_config(base)


def full_preset(resolution: int = 1024, **overrides) -> TrainConfig:
    """Full-scale schedule. Emitted as config only; reference runs took 41 h (1024) and 86 h (1536) on one Titan V."""
    base = dict(resolution=resolution, gan_epochs=600, classifier_epochs=25, decay_start=200, checkpoint_every=50)
    base.update(overrides)
    return build_train_config(base)


def load_settings() -> RuntimeSettings:
    return RuntimeSettings()

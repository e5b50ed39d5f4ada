# src/networks/checkpoint.py
"""
ModelBundle and its binary checkpoint format.

Layout (little-endian):
    b"DGAN" | u32 version | u64 run seed | u32 header length | header JSON
    | u32 array count | per array: u16 name length, name (utf-8), u8 ndim,
      u32 dims..., float32 data

The JSON header holds the G/D/Q spec descriptors and free-form run metadata
(epoch, phase, optimizer step counters, rng state). Named arrays hold every
parameter, running statistic and optional optimizer moment.
"""
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np
from pydantic import ValidationError

from src.errors import BadMagicError, CheckpointError, ConfigError, TruncatedCheckpointError, VersionMismatchError
from src.networks.classifier import ClassifierSpec, PolicyClassifier, build_policy_classifier
from src.networks.discriminator import Discriminator, DiscriminatorSpec, build_discriminator
from src.networks.generator import Generator, GeneratorSpec, build_generator
from src.utils.logging_utils import get_logger

LOG = get_logger("checkpoint")

MAGIC = b"DGAN"
FORMAT_VERSION = 1
_PREFIXES = {"G": "generator", "D": "discriminator", "Q": "classifier"}


@dataclass
class ModelBundle:
    generator: Generator
    discriminator: Discriminator
    classifier: PolicyClassifier
    seed: int
    version: int = FORMAT_VERSION
    metadata: Dict[str, Any] = field(default_factory=dict)
    # optimizer moments etc., stored verbatim next to the parameters
    extra_arrays: Dict[str, np.ndarray] = field(default_factory=dict)

    def networks(self):
        return {"G": self.generator, "D": self.discriminator, "Q": self.classifier}

    def specs(self) -> Dict[str, Dict[str, Any]]:
        return {key: net.descriptor().spec for key, net in self.networks().items()}

    def named_arrays(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for key, net in self.networks().items():
            for name, arr in net.state_arrays().items():
                out[f"{key}.{name}"] = arr
        for name, arr in self.extra_arrays.items():
            out[f"extra.{name}"] = arr
        return out


def build_bundle(seed: int, generator_spec: GeneratorSpec = None, discriminator_spec: DiscriminatorSpec = None,
                 classifier_spec: ClassifierSpec = None) -> ModelBundle:
    """Fresh G, D, Q. Each network draws its initial weights from its own stream of the run seed."""
    return ModelBundle(
        generator=build_generator(generator_spec, seed=[seed, 0]),
        discriminator=build_discriminator(discriminator_spec, seed=[seed, 1]),
        classifier=build_policy_classifier(classifier_spec, seed=[seed, 2]),
        seed=seed,
    )


def bundle_from_config(config) -> ModelBundle:
    """Fresh bundle with the network widths and noise channels a TrainConfig asks for."""
    try:
        specs = (GeneratorSpec(block_channels=config.generator_channels, noise_channels=config.noise_channels),
                 DiscriminatorSpec(block_channels=config.discriminator_channels),
                 ClassifierSpec(block_channels=config.classifier_channels))
    except ValidationError as e:
        raise ConfigError(f"network specs rejected by config: {e.errors()[0].get('msg')}") from None
    return build_bundle(config.seed, *specs)


# -------------------------
# Save
# -------------------------
def save_checkpoint(bundle: ModelBundle, path: str):
    header = json.dumps({"specs": bundle.specs(), "metadata": bundle.metadata}, sort_keys=True).encode("utf-8")
    arrays = bundle.named_arrays()
    tmp = path + ".tmp"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQI", bundle.version, bundle.seed, len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    os.replace(tmp, path)
    LOG.info("saved checkpoint %s (%d arrays)", path, len(arrays))


# -------------------------
# Load
# -------------------------
class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedCheckpointError(
                f"checkpoint {self.path} is truncated: needed {n} bytes at offset {self.pos}, file has {len(self.blob)}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint_arrays(path: str):
    """(version, seed, header dict, named arrays) without building networks."""
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)
    magic = r.take(len(MAGIC))
    if magic != MAGIC:
        raise BadMagicError(f"bad magic in {path}: expected {MAGIC!r}, found {magic!r}")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version} is not supported (expected {FORMAT_VERSION})")
    seed, header_len = r.unpack("<QI")
    try:
        header = json.loads(r.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"checkpoint header in {path} is not valid JSON: {e}") from None
    (count,) = r.unpack("<I")
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        n = int(np.prod(dims)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(r.blob):
        raise CheckpointError(f"checkpoint {path} has {len(r.blob) - r.pos} trailing bytes")
    return version, seed, header, arrays


def load_checkpoint(path: str) -> ModelBundle:
    version, seed, header, arrays = read_checkpoint_arrays(path)
    specs = header.get("specs", {})
    try:
        bundle = ModelBundle(
            generator=build_generator(GeneratorSpec(**specs.get("G", {}))),
            discriminator=build_discriminator(DiscriminatorSpec(**specs.get("D", {}))),
            classifier=build_policy_classifier(ClassifierSpec(**specs.get("Q", {}))),
            seed=seed,
            version=version,
            metadata=header.get("metadata", {}),
        )
    except ValueError as e:
        raise CheckpointError(f"checkpoint {path} carries an invalid spec: {e}") from None
    for key, net in bundle.networks().items():
        net.load_state_arrays(arrays, prefix=f"{key}.")
    bundle.extra_arrays = {k[len("extra."):]: v for k, v in arrays.items() if k.startswith("extra.")}
    LOG.info("loaded checkpoint %s (seed=%d, %d arrays)", path, seed, len(arrays))
    return bundle

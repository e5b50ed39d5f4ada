from src.networks.checkpoint import ModelBundle, build_bundle, bundle_from_config, load_checkpoint, save_checkpoint
from src.networks.classifier import ClassifierSpec, build_policy_classifier
from src.networks.discriminator import DiscriminatorSpec, build_discriminator
from src.networks.generator import GeneratorSpec, build_generator

__all__ = [
    "ClassifierSpec", "DiscriminatorSpec", "GeneratorSpec", "ModelBundle",
    "build_bundle", "bundle_from_config", "build_discriminator", "build_generator", "build_policy_classifier",
    "load_checkpoint", "save_checkpoint",
]

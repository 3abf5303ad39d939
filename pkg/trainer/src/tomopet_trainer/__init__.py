"""Conditional adversarial denoiser for low-dose PET reconstructions.

Consumes the core toolkit (geometry-free: manifests, image files, the
line-integral operator, posterior-sample files) and adds the torch-based
generator, discriminator, losses, and training loop.
"""

from .model import (
    PAPER_SCALE,
    Generator,
    GeneratorConfig,
    SmallResNetDiscriminator,
    TrainerError,
    build_discriminator,
    build_generator,
    count_parameters,
)
from .losses import (
    TorchRadon,
    adversarial_discriminator_loss,
    adversarial_generator_loss,
    combine_objective,
    consistency_loss,
    diversity_loss,
    first_moment_loss,
    gradient_penalty,
)
from .data import PairDataset
from .train import PRESETS, TrainConfig, Trainer, build_models, load_generator
from .export import draw_posterior_samples, export_posterior_samples

__all__ = [
    "PAPER_SCALE",
    "Generator",
    "GeneratorConfig",
    "SmallResNetDiscriminator",
    "TrainerError",
    "build_discriminator",
    "build_generator",
    "count_parameters",
    "TorchRadon",
    "adversarial_discriminator_loss",
    "adversarial_generator_loss",
    "combine_objective",
    "consistency_loss",
    "diversity_loss",
    "first_moment_loss",
    "gradient_penalty",
    "PairDataset",
    "PRESETS",
    "TrainConfig",
    "Trainer",
    "build_models",
    "load_generator",
    "draw_posterior_samples",
    "export_posterior_samples",
]

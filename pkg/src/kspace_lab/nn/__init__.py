"""Toy-scale networks with hand-written backward passes."""

from .models import (
    Discriminator,
    DiscriminatorConfig,
    RemnantBlock,
    RemUNet,
    RemUNetConfig,
    discriminator_forward,
    generator_forward,
    remnant_forward,
)
from .params import ParamStore, adam_step

__all__ = [
    "Discriminator",
    "DiscriminatorConfig",
    "ParamStore",
    "RemUNet",
    "RemUNetConfig",
    "RemnantBlock",
    "adam_step",
    "discriminator_forward",
    "generator_forward",
    "remnant_forward",
]

"""Desk-scale MRI reconstruction: k-space simulation, sampling masks, GRAPPA,
multi-strain losses, a toy adversarial RemU-Net and k-space correction."""

from .errors import (
    AcsTooSmallError,
    BudgetError,
    ConfigError,
    DivergenceError,
    DomainError,
    GeometryError,
    KspaceLabError,
    ShapeError,
    SingularFitError,
)
from .kcore import ComplexGrid, Domain, fft2c, ifft2c, spectral_decompose, unit_phase

__version__ = "0.1.0"

__all__ = [
    "AcsTooSmallError",
    "BudgetError",
    "ComplexGrid",
    "ConfigError",
    "DivergenceError",
    "Domain",
    "DomainError",
    "GeometryError",
    "KspaceLabError",
    "ShapeError",
    "SingularFitError",
    "fft2c",
    "ifft2c",
    "spectral_decompose",
    "unit_phase",
]

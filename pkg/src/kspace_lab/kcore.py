"""Complex grid type and centered orthonormal 2D Fourier transforms.

Rows are the frequency-encode axis, columns the phase-encode axis. The DC
coefficient sits at ``(height // 2, width // 2)`` so that the calibration
region is a contiguous central block.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

#: Modulus below which a spectral entry has no defined phase.
PHASE_EPS = 1e-12


class Domain(str, enum.Enum):
    IMAGE = "image"
    KSPACE = "kspace"


@dataclass(frozen=True, eq=False)
class ComplexGrid:
    """Immutable 2D complex array tagged with its domain."""

    data: np.ndarray
    domain: Domain

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.complex128, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"ComplexGrid needs a non-empty 2D array, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "domain", Domain(self.domain))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @classmethod
    def image(cls, data) -> ComplexGrid:
        return cls(data, Domain.IMAGE)

    @classmethod
    def kspace(cls, data) -> ComplexGrid:
        return cls(data, Domain.KSPACE)

    def with_data(self, data) -> ComplexGrid:
        return ComplexGrid(data, self.domain)

    def __repr__(self):
        return f"ComplexGrid({self.height}x{self.width}, domain={self.domain.value})"


@dataclass(frozen=True, eq=False)
class SpectralPair:
    magnitude: np.ndarray
    phase: np.ndarray

    def recompose(self) -> np.ndarray:
        return self.magnitude * self.phase


def _require(g: ComplexGrid, domain: Domain) -> None:
    if g.domain is not domain:
        raise DomainError(f"expected a {domain.value} grid, got {g.domain.value}")


def fft2c_array(x: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2D DFT over the last two axes of a plain array."""
    axes = (-2, -1)
    x = np.fft.ifftshift(x, axes=axes)
    x = np.fft.fft2(x, axes=axes, norm="ortho")
    return np.fft.fftshift(x, axes=axes)


def ifft2c_array(y: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2c_array`."""
    axes = (-2, -1)
    y = np.fft.ifftshift(y, axes=axes)
    y = np.fft.ifft2(y, axes=axes, norm="ortho")
    return np.fft.fftshift(y, axes=axes)


def fft2c(g: ComplexGrid) -> ComplexGrid:
    """Image grid to centered, orthonormally scaled k-space grid."""
    _require(g, Domain.IMAGE)
    return ComplexGrid(fft2c_array(g.data), Domain.KSPACE)


def ifft2c(g: ComplexGrid) -> ComplexGrid:
    _require(g, Domain.KSPACE)
    return ComplexGrid(ifft2c_array(g.data), Domain.IMAGE)


def unit_phase(z: np.ndarray, eps: float = PHASE_EPS) -> np.ndarray:
    """Elementwise ``z / |z|``, zero where ``|z| <= eps``."""
    mag = np.abs(z)
    out = np.zeros_like(z, dtype=np.complex128)
    nz = mag > eps
    out[nz] = z[nz] / mag[nz]
    return out


def spectral_decompose(y: ComplexGrid) -> SpectralPair:
    """Split a spectrum into modulus and unit-phase grids."""
    mag = np.abs(y.data)
    phase = unit_phase(y.data)
    mag.flags.writeable = False
    phase.flags.writeable = False
    return SpectralPair(mag, phase)


def real_part(g: ComplexGrid) -> np.ndarray:
    _require(g, Domain.IMAGE)
    return np.ascontiguousarray(g.data.real)

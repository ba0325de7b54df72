"""Synthetic phantoms with exact ground-truth k-space."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .kcore import ComplexGrid, Domain, fft2c_array
from .sampling import rng_for

# intensity, semi-axis x, semi-axis y, center x, center y, rotation (deg)
SHEPP_LOGAN = np.array(
    [
        [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
        [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
        [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
        [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
        [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
        [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
        [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
        [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
        [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
        [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
    ]
)


class PhantomKind(str, enum.Enum):
    ELLIPSES = "ellipses"
    BLOBS = "blobs"


@dataclass(frozen=True)
class PhantomSpec:
    kind: PhantomKind = PhantomKind.ELLIPSES
    dims: tuple[int, int] = (64, 64)
    count: int = 1
    seed: int = 0
    contrast_jitter: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", PhantomKind(self.kind))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        h, w = self.dims
        if h < 8 or w < 8 or h % 8 or w % 8:
            raise ShapeError(f"phantom dims must be positive multiples of 8, got {self.dims}")
        if self.count < 1:
            raise ValueError("phantom count must be >= 1")
        if self.contrast_jitter < 0:
            raise ValueError("contrast_jitter must be >= 0")


def _grid(h: int, w: int):
    y = (np.arange(h) - h / 2 + 0.5) / (h / 2)
    x = (np.arange(w) - w / 2 + 0.5) / (w / 2)
    yy, xx = np.meshgrid(-y, x, indexing="ij")
    return xx, yy


def shepp_logan(h: int, w: int, params: np.ndarray = SHEPP_LOGAN) -> np.ndarray:
    """Render ellipses on ``[-1, 1]^2`` with y pointing up."""
    xx, yy = _grid(h, w)
    img = np.zeros((h, w))
    for rho, a, b, x0, y0, phi in params:
        t = np.deg2rad(phi)
        dx, dy = xx - x0, yy - y0
        u = dx * np.cos(t) + dy * np.sin(t)
        v = -dx * np.sin(t) + dy * np.cos(t)
        img[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += rho
    return img


def _normalize(img: np.ndarray) -> np.ndarray:
    img = img - img.min()
    top = img.max()
    return img / top if top > 0 else img


def _ellipses(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    p = SHEPP_LOGAN.copy()
    n = len(p)
    j = spec.contrast_jitter
    # the outer skull keeps its intensity so interior contrasts stay positive
    p[1:, 0] *= 1 + j * rng.uniform(-1, 1, n - 1)
    p[:, 1:3] *= 1 + 0.05 * rng.uniform(-1, 1, (n, 2))
    p[:, 3:5] += 0.02 * rng.uniform(-1, 1, (n, 2))
    p[:, 5] += 5.0 * rng.uniform(-1, 1, n)
    img = shepp_logan(*spec.dims, params=p)
    return _normalize(np.clip(img, 0.0, None))


def _blobs(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    xx, yy = _grid(*spec.dims)
    img = np.zeros(spec.dims)
    for _ in range(int(rng.integers(5, 16))):
        cx, cy = rng.uniform(-0.6, 0.6, 2)
        sx, sy = rng.uniform(0.06, 0.25, 2)
        amp = rng.uniform(0.3, 1.0) * (1 + spec.contrast_jitter * rng.uniform(-1, 1))
        img += amp * np.exp(-0.5 * (((xx - cx) / sx) ** 2 + ((yy - cy) / sy) ** 2))
    return _normalize(img)


def make_phantoms(spec: PhantomSpec) -> list[np.ndarray]:
    """Seeded phantoms in ``[0, 1]``; phantom ``i`` depends only on ``(seed, i)``."""
    make = _ellipses if spec.kind is PhantomKind.ELLIPSES else _blobs
    return [make(spec, rng_for(spec.seed, 11, i)) for i in range(spec.count)]


def to_kspace(x: np.ndarray) -> ComplexGrid:
    return ComplexGrid(fft2c_array(np.asarray(x, dtype=np.complex128)), Domain.KSPACE)

"""Variable-density undersampling masks and the noisy acquisition model.

All randomness goes through a Philox generator keyed by the caller's seed, so
identical arguments always give bit-identical masks regardless of call order
or thread.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, DomainError, ShapeError
from .kcore import ComplexGrid, Domain

#: Gaussian density width as a fraction of the grid extent.
DENSITY_SIGMA = 0.15
#: Relative count tolerance for Poisson-disc masks.
POISSON_TOLERANCE = 0.02


class Pattern(str, enum.Enum):
    GAUSS1D = "gauss1d"
    GAUSS2D = "gauss2d"
    POISSON2D = "poisson2d"
    UNIFORM1D = "uniform1d"


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by ``seed`` and optional stream ids."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


@dataclass(frozen=True)
class AcsRegion:
    """Centered ``rows x cols`` calibration block."""

    rows: int
    cols: int
    height: int
    width: int

    @property
    def row_slice(self) -> slice:
        r0 = self.height // 2 - self.rows // 2
        return slice(r0, r0 + self.rows)

    @property
    def col_slice(self) -> slice:
        c0 = self.width // 2 - self.cols // 2
        return slice(c0, c0 + self.cols)

    @property
    def size(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True, eq=False)
class Mask:
    keep: np.ndarray
    acs: AcsRegion
    pattern: Pattern
    seed: int
    target_fraction: float
    accel: int | None = None

    def __post_init__(self):
        keep = np.array(self.keep, dtype=bool, copy=True)
        if keep.ndim != 2:
            raise ShapeError(f"mask must be 2D, got shape {keep.shape}")
        keep.flags.writeable = False
        object.__setattr__(self, "keep", keep)
        object.__setattr__(self, "pattern", Pattern(self.pattern))

    @property
    def height(self) -> int:
        return self.keep.shape[0]

    @property
    def width(self) -> int:
        return self.keep.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.keep.shape

    @property
    def acceleration(self) -> float:
        return 1.0 / self.target_fraction

    def is_column_constant(self) -> bool:
        return bool(np.all(self.keep == self.keep[:1, :]))


@dataclass(frozen=True)
class AcquisitionNoise:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError(f"noise sigma must be finite and >= 0, got {self.sigma}")


def default_acs_lines(width: int) -> int:
    return max(8, int(round(0.08 * width)))


def _acs_lines(acs, width: int) -> int:
    if acs is None:
        return default_acs_lines(width)
    if isinstance(acs, float) and acs < 1.0:
        return max(1, int(round(acs * width)))
    return int(acs)


def _gaussian_weights(n: int) -> np.ndarray:
    d = np.arange(n) - n // 2
    s = DENSITY_SIGMA * n
    return np.exp(-0.5 * (d / s) ** 2)


def _density_2d(height: int, width: int) -> np.ndarray:
    return np.outer(_gaussian_weights(height), _gaussian_weights(width))


def _weighted_pick(rng, candidates: np.ndarray, weights: np.ndarray, k: int) -> np.ndarray:
    if k <= 0:
        return candidates[:0]
    p = weights / weights.sum()
    return rng.choice(candidates, size=k, replace=False, p=p)


def gen_mask(pattern, height: int, width: int, target_fraction: float, acs=None, seed: int = 0) -> Mask:
    """Generate a center-weighted sampling mask with a forced ACS block.

    Parameters
    ----------
    pattern : Pattern or str
        ``gauss1d`` samples whole phase-encode columns, ``gauss2d`` samples
        individual points, ``poisson2d`` uses variable-density Poisson-disc
        dart throwing. ``uniform1d`` delegates to :func:`uniform_mask` with
        ``R = round(1 / target_fraction)``.
    target_fraction : float
        Retained fraction in (0, 1].
    acs : int or float, optional
        Number of central phase-encode lines (int) or a fraction of the
        width (float < 1). Defaults to 8% of the width, at least 8.
    seed : int
        Key for the counter-based generator.
    """
    pattern = Pattern(pattern)
    if height < 8 or width < 8:
        raise ShapeError(f"mask dims must be >= 8, got {height}x{width}")
    if not 0.0 < target_fraction <= 1.0:
        raise ValueError(f"target_fraction must lie in (0, 1], got {target_fraction}")
    n_acs = min(_acs_lines(acs, width), width)

    if pattern is Pattern.UNIFORM1D:
        return uniform_mask(height, width, int(round(1.0 / target_fraction)), n_acs)

    if pattern is Pattern.GAUSS1D:
        region = AcsRegion(height, n_acs, height, width)
        budget = int(round(target_fraction * width))
        need = n_acs
    else:
        acs_rows = min(height, max(1, int(round(n_acs * height / width))))
        region = AcsRegion(acs_rows, n_acs, height, width)
        budget = int(round(target_fraction * height * width))
        need = region.size
    if need > budget:
        raise BudgetError(f"ACS needs {need} samples but the budget is {budget}")

    keep = np.zeros((height, width), dtype=bool)
    if target_fraction == 1.0:
        keep[:] = True
        return Mask(keep, region, pattern, seed, target_fraction)

    keep[region.row_slice, region.col_slice] = True
    rng = rng_for(seed)

    if pattern is Pattern.GAUSS1D:
        cols = np.flatnonzero(~keep[0])
        chosen = _weighted_pick(rng, cols, _gaussian_weights(width)[cols], budget - n_acs)
        keep[:, chosen] = True
    elif pattern is Pattern.GAUSS2D:
        flat = np.flatnonzero(~keep.ravel())
        chosen = _weighted_pick(rng, flat, _density_2d(height, width).ravel()[flat], budget - need)
        keep.ravel()[chosen] = True
    else:
        keep = _poisson_disc(keep, budget, rng)
    return Mask(keep, region, pattern, seed, target_fraction)


def uniform_mask(height: int, width: int, accel: int, acs: int | None = None) -> Mask:
    """Every ``accel``-th phase-encode column plus a central ACS block.

    The lattice passes through the DC column, so ``(c - width // 2) % accel == 0``
    marks acquired columns outside the ACS.
    """
    if accel < 1:
        raise ValueError("accel must be >= 1")
    n_acs = min(_acs_lines(acs, width), width)
    region = AcsRegion(height, n_acs, height, width)
    cols = np.arange(width)
    col_keep = (cols - width // 2) % accel == 0
    col_keep[region.col_slice] = True
    keep = np.broadcast_to(col_keep, (height, width))
    frac = float(col_keep.sum()) / width
    return Mask(keep, region, Pattern.UNIFORM1D, 0, frac, accel=accel)


def _disk_offsets(radius: float) -> tuple[np.ndarray, np.ndarray]:
    r = int(math.ceil(radius))
    di, dj = np.mgrid[-r : r + 1, -r : r + 1]
    inside = di * di + dj * dj < radius * radius
    return di[inside], dj[inside]


def _throw_darts(base: np.ndarray, radius: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Accept pixels in ``order`` unless excluded by an earlier dart's disc."""
    height, width = base.shape
    occ = base.copy()
    flat_r = radius.ravel()
    dense = order[flat_r[order] <= 1.0]
    occ.ravel()[dense] = True
    # pad by the largest disc so stamping needs no bounds checks
    pad = int(math.ceil(float(radius.max()))) + 1
    blocked = np.zeros((height + 2 * pad, width + 2 * pad), dtype=bool)
    blocked[pad:-pad, pad:-pad] = occ
    cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for idx in order[flat_r[order] > 1.0].tolist():
        i, j = divmod(idx, width)
        if blocked[i + pad, j + pad]:
            continue
        occ[i, j] = True
        key = int(round(flat_r[idx] * 4))
        if key not in cache:
            di, dj = _disk_offsets(key / 4.0)
            cache[key] = (di + pad, dj + pad)
        di, dj = cache[key]
        blocked[i + di, j + dj] = True
    return occ


def _poisson_disc(base: np.ndarray, budget: int, rng: np.random.Generator) -> np.ndarray:
    height, width = base.shape
    density = _density_2d(height, width)
    max_r = 0.5 * min(height, width)
    inv = 1.0 / np.sqrt(density)
    order = rng.permutation(height * width)
    free = ~base

    # dart density ~ 1 / (c r^2) per pixel; seed r0 from that, then refine geometrically
    r0 = math.sqrt(float(density[free].sum()) / max(budget - base.sum(), 1) / 1.6)
    lo, hi = 0.0, None
    best = None
    for _ in range(12):
        occ = _throw_darts(base, np.minimum(r0 * inv, max_r), order)
        count = int(occ.sum())
        if best is None or abs(count - budget) < abs(int(best.sum()) - budget):
            best = occ
        if abs(count - budget) <= POISSON_TOLERANCE * budget:
            break
        if count > budget:
            lo = r0
            r0 = r0 * 1.5 if hi is None else 0.5 * (r0 + hi)
        else:
            hi = r0
            r0 = 0.5 * (lo + r0)
    occ = best
    count = int(occ.sum())
    if abs(count - budget) <= POISSON_TOLERANCE * budget:
        return occ

    occ = occ.copy()
    if count > budget:
        # drop the most recently thrown darts, keeps the disc property intact
        extra = occ.ravel()[order] & ~base.ravel()[order]
        drop = order[extra][::-1][: count - budget]
        occ.ravel()[drop] = False
    else:
        flat = np.flatnonzero(~occ.ravel())
        add = _weighted_pick(rng, flat, density.ravel()[flat], budget - count)
        occ.ravel()[add] = True
    return occ


def undersample(y: ComplexGrid, m: Mask, noise: AcquisitionNoise | None = None) -> ComplexGrid:
    """Masked noisy acquisition ``m * (y + n)`` with complex Gaussian ``n``."""
    if y.domain is not Domain.KSPACE:
        raise DomainError("undersample expects a k-space grid")
    if y.shape != m.shape:
        raise ShapeError(f"grid {y.shape} and mask {m.shape} differ")
    data = y.data
    if noise is not None and noise.sigma > 0:
        rng = rng_for(noise.seed, 1)
        n = rng.standard_normal((2,) + y.shape) * noise.sigma
        data = data + (n[0] + 1j * n[1])
    return ComplexGrid(np.where(m.keep, data, 0.0), Domain.KSPACE)


def retention_fraction(m: Mask) -> float:
    return float(m.keep.sum()) / m.keep.size

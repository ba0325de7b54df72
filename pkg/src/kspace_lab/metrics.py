"""PSNR and Gaussian-windowed SSIM."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ShapeError

#: Returned by :func:`psnr` for identical inputs.
PSNR_SENTINEL = 120.0


@dataclass(frozen=True)
class MetricConfig:
    peak: float = 255.0
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if not self.peak > 0:
            raise ValueError("peak must be positive")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be odd and >= 3")

    @property
    def c1(self) -> float:
        return (self.k1 * self.peak) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.peak) ** 2


DEFAULT = MetricConfig()


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    return x, y


def psnr(x, y, cfg: MetricConfig = DEFAULT) -> float:
    x, y = _pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return min(PSNR_SENTINEL, 20.0 * math.log10(cfg.peak / math.sqrt(mse)))


def _gauss_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - size // 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    return g / g.sum()


def _local_mean(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable filter, then keep only windows fully inside the image
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    r = len(g) // 2
    return out[r:-r, r:-r]


def ssim_map(x, y, cfg: MetricConfig = DEFAULT) -> np.ndarray:
    x, y = _pair(x, y)
    if x.ndim != 2 or min(x.shape) < cfg.ssim_window:
        raise ShapeError(f"SSIM needs 2D images of at least {cfg.ssim_window} pixels per side")
    g = _gauss_window(cfg.ssim_window, cfg.ssim_sigma)
    mx = _local_mean(x, g)
    my = _local_mean(y, g)
    vx = _local_mean(x * x, g) - mx * mx
    vy = _local_mean(y * y, g) - my * my
    cxy = _local_mean(x * y, g) - mx * my
    c1, c2 = cfg.c1, cfg.c2
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return num / den


def ssim(x, y, cfg: MetricConfig = DEFAULT) -> float:
    return float(np.mean(ssim_map(x, y, cfg)))


def rescale_pair(ref, img, peak: float = 255.0):
    """Map both images with the affine that sends ``ref``'s range onto ``[0, peak]``."""
    ref, img = _pair(ref, img)
    lo, hi = float(ref.min()), float(ref.max())
    span = hi - lo if hi > lo else 1.0
    return (ref - lo) * (peak / span), (img - lo) * (peak / span)


def image_quality(ref, img, cfg: MetricConfig = DEFAULT) -> dict:
    r, i = rescale_pair(ref, img, cfg.peak)
    return {"psnr": psnr(r, i, cfg), "ssim": ssim(r, i, cfg)}

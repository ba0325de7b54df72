"""Multi-strain reconstruction loss with analytic image-domain gradients.

Every term takes the generator's real image ``xhat`` and the real target
``xt`` and returns its value together with ``d value / d xhat``. Spectra use
the centered orthonormal transform, so image and k-space L2 terms share a
scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .grappa import DEFAULT_RIDGE, GrappaKernel, GrappaOperator, KernelGeometry, estimate_from_mask
from .kcore import PHASE_EPS, ComplexGrid, fft2c_array, ifft2c_array, unit_phase
from .nn import ops
from .sampling import AcquisitionNoise, Mask, rng_for, uniform_mask

D_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 15.0
    beta: float = 0.1
    gamma: float = 0.05
    delta: float = 0.01
    zeta: float = 0.00025
    kappa: float = 1e-3

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {k} must be finite and >= 0, got {v}")

    @classmethod
    def from_json(cls, path) -> LossWeights:
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class LossReport:
    imse: float = 0.0
    fmag: float = 0.0
    fphase: float = 0.0
    grappa_s: float = 0.0
    grappa_k: float = 0.0
    perceptual: float = 0.0
    adversarial: float = 0.0
    total: float = 0.0
    weights: LossWeights = field(default_factory=LossWeights)
    grad: np.ndarray | None = field(default=None, repr=False)
    #: d adversarial / d discriminator score, for the caller to back-propagate
    adversarial_grad: float = 0.0

    TERMS = ("imse", "fmag", "fphase", "grappa_s", "grappa_k", "perceptual", "adversarial", "total")

    def recompute_total(self) -> float:
        w = self.weights
        return (
            w.alpha * self.imse
            + w.beta * self.fmag
            + w.gamma * self.fphase
            + w.delta * self.grappa_s
            + w.zeta * self.grappa_k
            + w.kappa * self.perceptual
            + self.adversarial
        )

    def values(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.TERMS}

    def to_json(self) -> str:
        return json.dumps(self.values())


def _check(xhat, xt):
    xhat = np.asarray(xhat, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    if xhat.shape != xt.shape or xhat.ndim != 2:
        raise ShapeError(f"expected matching 2D grids, got {xhat.shape} and {xt.shape}")
    return xhat, xt


def loss_imse(xhat, xt):
    xhat, xt = _check(xhat, xt)
    r = xhat - xt
    return 0.5 * float(np.sum(r * r)), r


def loss_fmag(xhat, xt):
    """L2 distance between modulus spectra."""
    xhat, xt = _check(xhat, xt)
    z = fft2c_array(xhat)
    diff = np.abs(z) - np.abs(fft2c_array(xt))
    g = diff * unit_phase(z)
    return 0.5 * float(np.sum(diff * diff)), ifft2c_array(g).real


def loss_fphase(xhat, xt):
    """L2 distance between unit-phase spectra; entries at or below the guard carry no phase."""
    xhat, xt = _check(xhat, xt)
    z = fft2c_array(xhat)
    mag = np.abs(z)
    u = unit_phase(z)
    r = u - unit_phase(fft2c_array(xt))
    value = 0.5 * float(np.sum(np.abs(r) ** 2))
    # d/dz of |z/|z| - v|^2 / 2 is the component of r tangent to the unit circle, over |z|
    g = np.zeros_like(z)
    nz = mag > PHASE_EPS
    g[nz] = (r[nz] - np.real(np.conj(r[nz]) * u[nz]) * u[nz]) / mag[nz]
    return value, ifft2c_array(g).real


class GrappaLossConfig:
    """Submask, fixed kernel and noise for the GRAPPA consistency terms.

    The submask is uniform at ``geometry.accel`` plus the ACS, independent of
    the training mask. The kernel is held constant inside gradient
    computations; call :meth:`refresh` to re-estimate it from measured data.
    """

    def __init__(self, mask: Mask, kernel: GrappaKernel | None = None, noise: AcquisitionNoise | None = None,
                 geometry: KernelGeometry | None = None, ridge: float = DEFAULT_RIDGE):
        self.mask = mask
        self.geometry = geometry or (kernel.geometry if kernel is not None else KernelGeometry(accel=mask.accel or 2))
        self.ridge = ridge
        self.noise = noise or AcquisitionNoise()
        self._op = None
        self.kernel = None
        if kernel is not None:
            self.set_kernel(kernel)

    @classmethod
    def for_shape(cls, height: int, width: int, acs: int, accel: int = 2, **kw) -> GrappaLossConfig:
        return cls(uniform_mask(height, width, accel, acs), **kw)

    def set_kernel(self, kernel: GrappaKernel) -> None:
        self.kernel = kernel
        self._op = GrappaOperator(self.mask, kernel)

    def refresh(self, y_measured) -> GrappaKernel:
        """Estimate the kernel from the ACS of ``y_measured`` (k-space grid or array)."""
        data = y_measured.data if isinstance(y_measured, ComplexGrid) else np.asarray(y_measured)
        grid = ComplexGrid.kspace(data)
        kernel = estimate_from_mask(grid, self.mask, self.geometry, self.ridge)
        self.set_kernel(kernel)
        return kernel

    @property
    def operator(self) -> GrappaOperator:
        if self._op is None:
            raise RuntimeError("GRAPPA loss kernel not set; call refresh() or set_kernel() first")
        return self._op

    def with_noise(self, noise: AcquisitionNoise) -> GrappaLossConfig:
        other = GrappaLossConfig(self.mask, None, noise, self.geometry, self.ridge)
        other.kernel, other._op = self.kernel, self._op
        return other


def loss_grappa(xhat, xt, yt, cfg: GrappaLossConfig, delta: float = 1.0, zeta: float = 1.0):
    """GRAPPA consistency in image and k-space domains.

    Returns ``(value_s, value_k, grad)`` where ``grad = delta * d value_s +
    zeta * d value_k`` with respect to ``xhat``.
    """
    xhat, xt = _check(xhat, xt)
    yt = yt.data if isinstance(yt, ComplexGrid) else np.asarray(yt)
    if yt.shape != xhat.shape:
        raise ShapeError(f"target spectrum {yt.shape} does not match image {xhat.shape}")
    op = cfg.operator
    keep = cfg.mask.keep
    y = fft2c_array(xhat)
    if cfg.noise.sigma > 0:
        n = rng_for(cfg.noise.seed, 3).standard_normal((2,) + y.shape) * cfg.noise.sigma
        y = y + (n[0] + 1j * n[1])
    y_gu = np.where(keep, y, 0)
    filled = op.forward(y_gu)
    img = ifft2c_array(filled)
    rs = img.real - xt
    rk = filled - yt
    value_s = 0.5 * float(np.sum(rs * rs))
    value_k = 0.5 * float(np.sum(np.abs(rk) ** 2))
    # adjoint chain: fill^H, mask, then fft2c^H = ifft2c
    back = delta * fft2c_array(rs) + zeta * rk
    g = np.where(keep, op.adjoint(back), 0)
    return value_s, value_k, ifft2c_array(g).real


class PerceptualExtractor:
    """Frozen three-stage strided conv pyramid standing in for a pretrained extractor."""

    def __init__(self, seed: int = 0, widths=(8, 16, 32), slope: float = 0.2, weights=None):
        self.widths = tuple(widths)
        self.slope = slope
        if weights is None:
            rng = rng_for(seed, 303)
            weights = []
            cin = 1
            for co in self.widths:
                weights.append(rng.standard_normal((co, cin, 3, 3)) * math.sqrt(2.0 / (cin * 9)))
                cin = co
        self.weights = []
        for w in weights:
            w = np.array(w, dtype=np.float64)
            w.flags.writeable = False
            self.weights.append(w)

    @classmethod
    def from_file(cls, path) -> PerceptualExtractor:
        """Load stage weights ``w0, w1, w2`` (``(C_out, C_in, 3, 3)``) from an ``.npz`` file."""
        with np.load(path) as f:
            ws = [f[f"w{i}"] for i in range(len(f.files))]
        return cls(weights=ws, widths=[w.shape[0] for w in ws])

    def save(self, path) -> None:
        np.savez(path, **{f"w{i}": w for i, w in enumerate(self.weights)})

    def features(self, x):
        x = np.asarray(x, dtype=np.float64)
        h = x[None, None]
        feats, caches = [], []
        for w in self.weights:
            z, cc = ops.conv2d_forward(h, w, None, 2, 1)
            h, ca = ops.leaky_relu_forward(z, self.slope)
            feats.append(h)
            caches.append((cc, ca))
        return feats, caches

    def backward(self, dfeats, caches):
        d = None
        for df, (cc, ca) in zip(reversed(dfeats), reversed(caches)):
            d = df if d is None else d + df
            d = ops.leaky_relu_backward(d, ca)
            d, _, _ = ops.conv2d_backward(d, cc)
        return d[0, 0]


def loss_perceptual(xhat, xt, ex: PerceptualExtractor):
    xhat, xt = _check(xhat, xt)
    k = 2 ** len(ex.weights)
    if xhat.shape[0] % k or xhat.shape[1] % k:
        raise ShapeError(f"perceptual loss needs dims divisible by {k}, got {xhat.shape}")
    fa, ca = ex.features(xhat)
    fb, _ = ex.features(xt)
    diffs = [a - b for a, b in zip(fa, fb)]
    value = 0.5 * float(sum(np.sum(d * d) for d in diffs))
    return value, ex.backward(diffs, ca)


def loss_adversarial(d_out: float):
    """Generator term ``-log D``; returns ``(value, d value / d d_out)``."""
    d = min(max(float(d_out), D_CLAMP), 1.0 - D_CLAMP)
    return -math.log(d), -1.0 / d


def total_loss(xhat, xt, yt=None, grappa: GrappaLossConfig | None = None, extractor: PerceptualExtractor | None = None,
               weights: LossWeights = LossWeights(), d_out: float | None = None) -> LossReport:
    """Evaluate every term and the weighted total.

    Terms whose inputs are absent (no GRAPPA config, no extractor, no
    discriminator score) report zero. ``report.grad`` holds the weighted
    image-domain gradient; the adversarial gradient is left in
    ``report.adversarial_grad`` for the caller to push through the
    discriminator.
    """
    xhat, xt = _check(xhat, xt)
    w = weights
    rep = LossReport(weights=w)
    rep.imse, g = loss_imse(xhat, xt)
    grad = w.alpha * g
    rep.fmag, g = loss_fmag(xhat, xt)
    grad += w.beta * g
    rep.fphase, g = loss_fphase(xhat, xt)
    grad += w.gamma * g
    if grappa is not None:
        if yt is None:
            yt = fft2c_array(xt)
        rep.grappa_s, rep.grappa_k, g = loss_grappa(xhat, xt, yt, grappa, w.delta, w.zeta)
        grad += g
    if extractor is not None:
        rep.perceptual, g = loss_perceptual(xhat, xt, extractor)
        grad += w.kappa * g
    if d_out is not None:
        rep.adversarial, rep.adversarial_grad = loss_adversarial(d_out)
    rep.total = rep.recompute_total()
    rep.grad = grad
    return rep

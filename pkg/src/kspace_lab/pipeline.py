"""Baselines, generator inference with k-space correction, training and evaluation.

Images handed to the generator are real planes in ``[0, 1]`` mapped affinely
to ``[-1, 1]``; the tanh output is mapped back before any loss or metric.
"""

from __future__ import annotations

import enum
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import AcsTooSmallError, ConfigError, DivergenceError, GeometryError, ShapeError, SingularFitError
from .grappa import DEFAULT_RIDGE, CoilStack, KernelGeometry, estimate_kernel, grappa_reconstruct, lattice_offset
from .kcore import ComplexGrid, Domain, fft2c, fft2c_array, ifft2c, ifft2c_array
from .losses import D_CLAMP, GrappaLossConfig, LossReport, LossWeights, PerceptualExtractor, total_loss
from .metrics import MetricConfig, image_quality
from .nn import Discriminator, DiscriminatorConfig, ParamStore, RemUNet, RemUNetConfig, adam_step
from .phantom import PhantomKind, PhantomSpec, to_kspace
from .sampling import AcquisitionNoise, Mask, Pattern, gen_mask, rng_for, undersample


class Method(str, enum.Enum):
    ZERO_FILL = "zerofill"
    GRAPPA = "grappa"
    NET = "net"
    NET_CORRECTED = "net_corrected"


@dataclass(frozen=True, eq=False)
class ReconResult:
    """A reconstruction.

    ``image`` is the real image used for display and metrics (a magnitude
    for every method except ``Net``, whose output is already real).
    ``complex_image`` is the complex image whose spectrum is ``kspace``.
    ``meta`` records e.g. ``{"input": "zerofill"}`` when the GRAPPA input
    path fell back to zero-fill.
    """

    image: np.ndarray
    kspace: ComplexGrid
    method: Method
    complex_image: ComplexGrid | None = None
    metrics: dict | None = None
    meta: dict = field(default_factory=dict)

    def with_metrics(self, ref, cfg: MetricConfig = MetricConfig()) -> ReconResult:
        return replace(self, metrics=image_quality(ref, self.image, cfg))


def zero_fill_recon(y_u: ComplexGrid) -> ReconResult:
    x = ifft2c(y_u)
    return ReconResult(np.abs(x.data), y_u, Method.ZERO_FILL, x)


def grappa_admissible(m: Mask) -> int | None:
    """Acceleration of the uniform lattice underlying ``m``, or None."""
    if m.keep.all():
        return m.accel or 2
    for accel in ([m.accel] if m.accel else range(2, 9)):
        try:
            lattice_offset(m, accel)
            return accel
        except GeometryError:
            continue
    return None


def grappa_recon(y_u: ComplexGrid, m: Mask, ridge: float = DEFAULT_RIDGE) -> ReconResult:
    """GRAPPA baseline; masks without a uniform lattice fall back to zero-fill."""
    x_g, source = generator_input(y_u, m, ridge)
    return ReconResult(np.abs(x_g.data), fft2c(x_g), Method.GRAPPA, x_g, meta={"input": source})


def generator_input(y_u: ComplexGrid, m: Mask, ridge: float = DEFAULT_RIDGE) -> tuple[ComplexGrid, str]:
    """``x_g``: GRAPPA reconstruction when the mask allows it, else zero-fill."""
    accel = grappa_admissible(m)
    if accel is not None:
        try:
            return grappa_reconstruct(y_u, m, KernelGeometry(accel=accel), ridge), "grappa"
        except (AcsTooSmallError, SingularFitError):
            pass
    return ifft2c(y_u), "zerofill"


def kspace_correct(gen_img: ComplexGrid, x_g: ComplexGrid, m: Mask) -> ComplexGrid:
    """Measured spectrum of ``x_g`` on the sampled set, generator spectrum elsewhere."""
    if gen_img.shape != x_g.shape or x_g.shape != m.shape:
        raise ShapeError(f"shapes differ: generator {gen_img.shape}, input {x_g.shape}, mask {m.shape}")
    y_g = fft2c(x_g).data
    y_n = fft2c(gen_img).data
    return ComplexGrid(np.where(m.keep, y_g, y_n), Domain.KSPACE)


def to_net(img: np.ndarray) -> np.ndarray:
    return 2.0 * img - 1.0


def from_net(out: np.ndarray) -> np.ndarray:
    return 0.5 * (out + 1.0)


class GeneratorState:
    """A RemU-Net bound to parameters; maps a real ``[0, 1]`` image to another.

    With ``refine`` the network output is a correction added to its input
    (both in the ``[-1, 1]`` network range).
    """

    def __init__(self, cfg: RemUNetConfig, store: ParamStore, refine: bool = True):
        self.cfg = cfg
        self.net = RemUNet(cfg)
        self.store = store
        self.refine = refine

    def __call__(self, img: np.ndarray) -> np.ndarray:
        inp = to_net(np.asarray(img, dtype=np.float64))
        out, _ = self.net.forward(self.store, inp[None, None], train=False)
        out = out[0, 0]
        return from_net(out + inp if self.refine else out)


def net_recon(y_u: ComplexGrid, m: Mask, generator: Callable[[np.ndarray], np.ndarray], correct: bool = True,
              ridge: float = DEFAULT_RIDGE) -> ReconResult:
    """Generator inference on ``x_g``, optionally followed by k-space correction.

    ``generator`` is a :class:`GeneratorState` or any callable mapping a real
    ``[0, 1]`` image to a real image of the same shape.
    """
    x_g, source = generator_input(y_u, m, ridge)
    gen = np.asarray(generator(x_g.data.real), dtype=np.float64)
    gen_grid = ComplexGrid.image(gen)
    if not correct:
        return ReconResult(gen, fft2c(gen_grid), Method.NET, gen_grid, meta={"input": source})
    y_hat = kspace_correct(gen_grid, x_g, m)
    x_hat = ifft2c(y_hat)
    return ReconResult(np.abs(x_hat.data), y_hat, Method.NET_CORRECTED, x_hat, meta={"input": source})


def observed_residual(res: ReconResult, x_g: ComplexGrid, m: Mask) -> float:
    """``|| (kspace - fft2c(x_g)) * m ||``; exactly zero after correction."""
    d = np.where(m.keep, res.kspace.data - fft2c(x_g).data, 0)
    return float(np.linalg.norm(d))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaskSpec:
    pattern: Pattern = Pattern.GAUSS1D
    fraction: float = 0.3
    acs: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pattern", Pattern(self.pattern))

    def build(self, height: int, width: int) -> Mask:
        return gen_mask(self.pattern, height, width, self.fraction, self.acs, self.seed)


def _spec_from(cls, value):
    return value if isinstance(value, cls) else cls(**value)


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; ``to_json``/``from_json`` mirror the field names.

    ``kernel_refresh`` is the number of steps between GRAPPA-loss kernel
    re-estimates; 0 re-estimates once at the start of every epoch.
    ``adversarial`` selects ``"log"`` (``-log D``) or ``"critic"`` (unbounded
    logit critic, experimental). ``refine`` adds the generator input to the
    network output, so the network learns a correction. ``phantoms``
    describes the training set used by the command line.
    """

    epochs: int = 30
    batch_size: int = 1
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weights: LossWeights = LossWeights()
    mask: MaskSpec = MaskSpec()
    noise_sigma: float = 0.0
    seed: int = 0
    kernel_refresh: int = 0
    correct_in_loop: bool = True
    refine: bool = True
    adversarial: str = "log"
    perceptual_seed: int = 0
    generator: RemUNetConfig = RemUNetConfig()
    discriminator: DiscriminatorConfig = DiscriminatorConfig()
    phantoms: PhantomSpec = PhantomSpec(kind=PhantomKind.BLOBS, dims=(64, 64), count=200)

    def __post_init__(self):
        object.__setattr__(self, "weights", _spec_from(LossWeights, self.weights))
        object.__setattr__(self, "mask", _spec_from(MaskSpec, self.mask))
        object.__setattr__(self, "generator", _spec_from(RemUNetConfig, self.generator))
        object.__setattr__(self, "discriminator", _spec_from(DiscriminatorConfig, self.discriminator))
        object.__setattr__(self, "phantoms", _spec_from(PhantomSpec, self.phantoms))
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.kernel_refresh < 0:
            raise ConfigError("kernel_refresh must be >= 0")
        for name in ("lr", "beta1", "beta2", "eps", "noise_sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.adversarial not in ("log", "critic"):
            raise ConfigError(f"adversarial must be 'log' or 'critic', got {self.adversarial!r}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["weights"] = asdict(self.weights)
        d["mask"] = {**asdict(self.mask), "pattern": self.mask.pattern.value}
        d["generator"] = self.generator.to_dict()
        d["discriminator"] = self.discriminator.to_dict()
        p = self.phantoms
        d["phantoms"] = {"kind": p.kind.value, "dims": list(p.dims), "count": p.count, "seed": p.seed,
                         "contrast_jitter": p.contrast_jitter}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_json(cls, path) -> TrainConfig:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"no such file: {path}")
        return cls.from_dict(json.loads(path.read_text()))


class TrainResult(NamedTuple):
    generator: ParamStore
    discriminator: ParamStore
    history: list


def _derived_seed(*keys: int) -> int:
    return int(rng_for(*keys).integers(2**62))


def _refresh_kernel(gcfg: GrappaLossConfig, y_u: np.ndarray, m: Mask) -> None:
    # calibrate from the measured ACS block; columns line up with the submask's ACS
    geom = gcfg.geometry
    block = y_u[m.acs.row_slice, m.acs.col_slice]
    p = lattice_offset(gcfg.mask, geom.accel)
    c0 = gcfg.mask.acs.col_slice.start
    kernel = estimate_kernel(CoilStack(block[None], Domain.KSPACE), geom, gcfg.ridge, (p - c0) % geom.accel)
    gcfg.set_kernel(kernel)


def _mean_report(reports: list[LossReport], weights: LossWeights) -> LossReport:
    out = LossReport(weights=weights)
    for k in LossReport.TERMS:
        setattr(out, k, float(np.mean([getattr(r, k) for r in reports])))
    return out


def _bce_disc(scores, real: bool):
    s = np.clip(scores, D_CLAMP, 1 - D_CLAMP)
    if real:
        return float(-np.log(s).sum()), -1.0 / s
    return float(-np.log1p(-s).sum()), 1.0 / (1.0 - s)


def train(dataset: Sequence[np.ndarray], cfg: TrainConfig = TrainConfig(), log: Callable[[int, LossReport], None] | None = None) -> TrainResult:
    """Adversarial training of the generator with the multi-strain total loss.

    Each step updates the discriminator once on a (target, reconstruction)
    batch, then the generator once on ``L_total`` with the adversarial term
    scored by the updated discriminator. The GRAPPA-consistency kernel is
    held fixed inside each gradient. ``history[e]`` is the mean report of
    epoch ``e``. ``log`` is called after each epoch.
    """
    if len(dataset) == 0:
        raise ConfigError("training dataset is empty")
    data = [np.asarray(x, dtype=np.float64) for x in dataset]
    h, w = data[0].shape
    if any(x.shape != (h, w) for x in data):
        raise ShapeError("training images must share one shape")
    k = 2 ** max(cfg.generator.levels, len(cfg.discriminator.widths), 3)
    if h % k or w % k:
        raise ShapeError(f"image dims {(h, w)} must be divisible by {k}")

    gnet, dnet = RemUNet(cfg.generator), Discriminator(cfg.discriminator)
    sg, sd = gnet.init_params(cfg.seed), dnet.init_params(cfg.seed)
    mask = cfg.mask.build(h, w)
    keep = mask.keep
    gcfg = GrappaLossConfig.for_shape(h, w, acs=mask.acs.cols, accel=2)
    extractor = PerceptualExtractor(cfg.perceptual_seed)
    adam = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    critic = cfg.adversarial == "critic"
    history = []
    step = 0
    n = len(data)

    for epoch in range(cfg.epochs):
        order = rng_for(cfg.seed, 5, epoch).permutation(n)
        reports = []
        for b0 in range(0, n, cfg.batch_size):
            idx = order[b0 : b0 + cfg.batch_size]
            B = len(idx)
            xt = np.stack([data[i] for i in idx])
            yt = fft2c_array(xt)
            y_u = np.empty_like(yt)
            noises = []
            for j, i in enumerate(idx):
                noise = AcquisitionNoise(cfg.noise_sigma, _derived_seed(cfg.seed, 7, epoch, int(i)))
                noises.append(noise)
                y_u[j] = undersample(ComplexGrid.kspace(yt[j]), mask, noise).data
            if (cfg.kernel_refresh == 0 and b0 == 0) or (cfg.kernel_refresh and step % cfg.kernel_refresh == 0):
                _refresh_kernel(gcfg, y_u[0], mask)
            x_g = np.stack([generator_input(ComplexGrid.kspace(y), mask)[0].data for y in y_u])
            y_g = fft2c_array(x_g)

            inp = to_net(x_g.real)
            out, gcache = gnet.forward(sg, inp[:, None], train=True)
            gen = from_net(out[:, 0] + inp if cfg.refine else out[:, 0])
            if cfg.correct_in_loop:
                xhat = ifft2c_array(np.where(keep, y_g, fft2c_array(gen))).real
            else:
                xhat = gen

            # discriminator: ascend log D(x_t) + log(1 - D(xhat))
            s_r, c_r = dnet.forward(sd, to_net(xt)[:, None], train=True)
            s_f, c_f = dnet.forward(sd, to_net(np.abs(xhat))[:, None], train=True)
            if critic:
                _, gr = dnet.backward(sd, -np.ones(B) / B, c_r, wrt="logit")
                _, gf = dnet.backward(sd, np.ones(B) / B, c_f, wrt="logit")
            else:
                _, ds_r = _bce_disc(s_r, True)
                _, ds_f = _bce_disc(s_f, False)
                _, gr = dnet.backward(sd, ds_r / B, c_r)
                _, gf = dnet.backward(sd, ds_f / B, c_f)
            adam_step(sd, gr + gf, **adam)

            # generator: descend L_total with the adversarial term from the updated D
            s_g, c_g = dnet.forward(sd, to_net(np.abs(xhat))[:, None], train=True)
            batch_reports = []
            dxhat = np.empty_like(xhat)
            dadv = np.empty(B)
            for j, i in enumerate(idx):
                gl = gcfg.with_noise(AcquisitionNoise(cfg.noise_sigma, noises[j].seed))
                rep = total_loss(xhat[j], xt[j], yt[j], gl, extractor, cfg.weights, None if critic else float(s_g[j]))
                if critic:
                    rep.adversarial = -float(Discriminator.logits(c_g)[j])
                    rep.adversarial_grad = -1.0
                    rep.total = rep.recompute_total()
                if not math.isfinite(rep.total):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch=epoch)
                dxhat[j] = rep.grad
                dadv[j] = rep.adversarial_grad
                rep.grad = None
                batch_reports.append(rep)
            dx_adv, _ = dnet.backward(sd, dadv, c_g, wrt="logit" if critic else "score")
            dxhat += 2.0 * np.sign(xhat) * dx_adv[:, 0]
            if cfg.correct_in_loop:
                dgen = ifft2c_array(np.where(keep, 0, fft2c_array(dxhat))).real
            else:
                dgen = dxhat
            _, gg = gnet.backward(sg, (0.5 * dgen / B)[:, None], gcache)
            adam_step(sg, gg, **adam)
            reports.append(_mean_report(batch_reports, cfg.weights))
            step += 1

        mean = _mean_report(reports, cfg.weights)
        history.append(mean)
        if log is not None:
            log(epoch, mean)
    return TrainResult(sg, sd, history)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def eval_threads() -> int:
    env = os.environ.get("KSPACE_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"KSPACE_LAB_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


@dataclass
class EvalTable:
    rows: list
    aggregates: list

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.rows + self.aggregates)

    def aggregate(self, method: Method | str) -> dict:
        method = Method(method).value
        return next(a for a in self.aggregates if a["method"] == method)


def _eval_one(i, x, m, generator, noise, metric_cfg, ridge):
    y_u = undersample(to_kspace(x), m, noise)
    x_g, source = generator_input(y_u, m, ridge)
    results = [zero_fill_recon(y_u), grappa_recon(y_u, m, ridge)]
    if generator is not None:
        results.append(net_recon(y_u, m, generator, correct=False, ridge=ridge))
        results.append(net_recon(y_u, m, generator, correct=True, ridge=ridge))
    rows = []
    for r in results:
        q = image_quality(x, r.image, metric_cfg)
        row = {"image": i, "method": r.method.value, "psnr": q["psnr"], "ssim": q["ssim"]}
        if r.method in (Method.NET, Method.NET_CORRECTED):
            row["dc_residual"] = observed_residual(r, x_g, m)
        if r.meta.get("input", "grappa") != "grappa":
            row["input"] = r.meta["input"]
        rows.append(row)
    return rows


def evaluate(dataset: Sequence[np.ndarray], generator=None, masks: Mask | Sequence[Mask] | None = None,
             cfg: MetricConfig = MetricConfig(), noise_sigma: float = 0.0, seed: int = 0,
             threads: int | None = None, ridge: float = DEFAULT_RIDGE) -> EvalTable:
    """Per-image and aggregate PSNR/SSIM for each reconstruction method.

    ``masks`` is one mask for every image or one per image. Work is spread
    over ``threads`` workers (default :func:`eval_threads`); rows come back
    in image order regardless of the worker count.
    """
    data = [np.asarray(x, dtype=np.float64) for x in dataset]
    if not data:
        raise ConfigError("evaluation dataset is empty")
    if masks is None:
        raise ConfigError("evaluate needs a mask")
    mask_list = [masks] * len(data) if isinstance(masks, Mask) else list(masks)
    if len(mask_list) != len(data):
        raise ConfigError(f"{len(mask_list)} masks for {len(data)} images")
    noises = [AcquisitionNoise(noise_sigma, _derived_seed(seed, 8, i)) for i in range(len(data))]
    args = [(i, data[i], mask_list[i], generator, noises[i], cfg, ridge) for i in range(len(data))]
    threads = threads or eval_threads()
    if threads == 1:
        per_image = [_eval_one(*a) for a in args]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_image = list(pool.map(lambda a: _eval_one(*a), args))
    rows = [r for rs in per_image for r in rs]
    aggregates = []
    for method in Method:
        sel = [r for r in rows if r["method"] == method.value]
        if not sel:
            continue
        ps = np.array([r["psnr"] for r in sel])
        ss = np.array([r["ssim"] for r in sel])
        aggregates.append({
            "method": method.value, "n": len(sel),
            "psnr_mean": float(ps.mean()), "psnr_std": float(ps.std()),
            "ssim_mean": float(ss.mean()), "ssim_std": float(ss.std()),
        })
    return EvalTable(rows, aggregates)

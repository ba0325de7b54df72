"""RemU-Net generator and convolutional discriminator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from ..sampling import rng_for
from . import ops
from .layers import BatchNorm, Conv2d, ConvBlock, ConvTranspose2d, Dense
from .params import ParamStore


def _lrelu_gain(slope: float) -> float:
    return math.sqrt(2.0 / (1.0 + slope * slope))


def _collect(layers):
    manifest, buffers = [], {}
    for layer in layers:
        manifest += layer.manifest()
        buffers.update(layer.buffers())
    return manifest, buffers


@dataclass(frozen=True)
class RemUNetConfig:
    levels: int = 3
    base_width: int = 8
    remnant_widths: tuple = (8, 16, 32)
    leaky_slope: float = 0.2
    max_width: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "remnant_widths", tuple(int(w) for w in self.remnant_widths))
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.base_width < 1 or len(self.remnant_widths) != 3 or min(self.remnant_widths) < 1:
            raise ValueError("widths must be positive and remnant_widths a triple")
        if any(b <= a for a, b in zip(self.remnant_widths, self.remnant_widths[1:])):
            raise ValueError(f"remnant_widths must increase, got {self.remnant_widths}")

    @classmethod
    def full_scale(cls) -> RemUNetConfig:
        """Eight encoder/decoder levels and 64/128/256 remnant widths; needs 256x256 input."""
        return cls(levels=8, base_width=64, remnant_widths=(64, 128, 256), max_width=512)

    def width(self, level: int) -> int:
        w = self.base_width * 2**level
        return min(w, self.max_width) if self.max_width else w

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "base_width": self.base_width,
            "remnant_widths": list(self.remnant_widths),
            "leaky_slope": self.leaky_slope,
            "max_width": self.max_width,
        }


class RemnantBlock:
    """Bridge sub-network: the batch-normalized input is added to every stage input.

    ``n = BN(x)``; ``s1 = BN(conv(n))``; ``s_k = BN(conv(s_{k-1} + n))``;
    ``residue = n - conv1x1(s_3)``. Output spatial size equals input size.
    """

    def __init__(self, name: str, widths=(8, 16, 32)):
        self.name = name
        self.widths = tuple(widths)
        self.norm_in = BatchNorm(f"{name}.norm_in", 1)
        cins = (1,) + self.widths[:-1]
        self.convs = [Conv2d(f"{name}.conv{i}", ci, co, 3, 1, 1) for i, (ci, co) in enumerate(zip(cins, self.widths))]
        self.norms = [BatchNorm(f"{name}.conv{i}.bn", co) for i, co in enumerate(self.widths)]
        self.proj = Conv2d(f"{name}.proj", self.widths[-1], 1, 1, 1, 0, gain=1.0)

    @property
    def layers(self):
        return [self.norm_in, *self.convs, *self.norms, self.proj]

    def forward(self, store, x, train=True):
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"remnant block expects a 1-channel (N, 1, H, W) input, got {x.shape}")
        n, c_in = self.norm_in.forward(store, x, train)
        h = n
        caches = []
        for i, (conv, bn) in enumerate(zip(self.convs, self.norms)):
            inp = h if i == 0 else h + n
            h, cc = conv.forward(store, inp)
            h, cb = bn.forward(store, h, train)
            caches.append((cc, cb))
        o, c_proj = self.proj.forward(store, h)
        return n - o, (c_in, caches, c_proj)

    def backward(self, store, grads, dres, cache):
        c_in, caches, c_proj = cache
        dn = dres.copy()
        dh = self.proj.backward(store, grads, -dres, c_proj)
        for i in reversed(range(len(self.convs))):
            cc, cb = caches[i]
            dh = self.norms[i].backward(store, grads, dh, cb)
            dinp = self.convs[i].backward(store, grads, dh, cc)
            if i == 0:
                dn += dinp
            else:
                dn += dinp.sum(axis=1, keepdims=True)
                dh = dinp
        return self.norm_in.backward(store, grads, dn, c_in)


class RemUNet:
    """U-Net with stride-2 encoder/decoder, remnant bridge and tanh output."""

    def __init__(self, cfg: RemUNetConfig = RemUNetConfig()):
        self.cfg = cfg
        s = cfg.leaky_slope
        g = _lrelu_gain(s)
        L = cfg.levels
        self.enc = []
        cin = 1
        for lvl in range(L):
            co = cfg.width(lvl)
            self.enc.append(ConvBlock(Conv2d(f"enc{lvl}", cin, co, 4, 2, 1, gain=g), co, s))
            cin = co
        self.bridge = Conv2d("bridge", cin, 1, 1, 1, 0, gain=1.0)
        self.remnant = RemnantBlock("remnant", cfg.remnant_widths)
        self.dec = []
        for lvl in reversed(range(L)):
            ci = cfg.width(L - 1) + 1 if lvl == L - 1 else 2 * cfg.width(lvl)
            co = cfg.width(lvl - 1) if lvl > 0 else cfg.base_width
            self.dec.append(ConvBlock(ConvTranspose2d(f"dec{lvl}", ci, co, 4, 2, 1, gain=g), co, s))
        self.out = Conv2d("out", cfg.base_width, 1, 3, 1, 1, gain=1.0)

    @property
    def layers(self):
        return [*self.enc, self.bridge, *self.remnant.layers, *self.dec, self.out]

    def init_params(self, seed: int = 0) -> ParamStore:
        manifest, buffers = _collect(self.layers)
        store = ParamStore(manifest, buffers)
        rng = rng_for(seed, 101)
        for layer in self.layers:
            layer.init(store, rng)
        return store

    def forward(self, store, x, train=True):
        L = self.cfg.levels
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"generator expects (N, 1, H, W), got {x.shape}")
        if x.shape[2] % 2**L or x.shape[3] % 2**L:
            raise ShapeError(f"input dims {x.shape[2:]} must be divisible by {2**L}")
        feats, enc_c = [], []
        h = x
        for blk in self.enc:
            h, c = blk.forward(store, h, train)
            feats.append(h)
            enc_c.append(c)
        p, c_bridge = self.bridge.forward(store, h)
        r, c_rem = self.remnant.forward(store, p, train)
        d = np.concatenate([h, r], axis=1)
        dec_c = []
        for i, blk in enumerate(self.dec):
            lvl = L - 1 - i
            d, c = blk.forward(store, d, train)
            dec_c.append(c)
            if lvl > 0:
                d = np.concatenate([d, feats[lvl - 1]], axis=1)
        z, c_out = self.out.forward(store, d)
        y, c_tanh = ops.tanh_forward(z)
        return y, (enc_c, c_bridge, c_rem, dec_c, c_out, c_tanh, [f.shape[1] for f in feats])

    def backward(self, store, dout, cache):
        """Returns ``(d input, flat parameter gradients)``."""
        enc_c, c_bridge, c_rem, dec_c, c_out, c_tanh, fch = cache
        L = self.cfg.levels
        grads = store.zeros()
        dskip = [None] * L
        d = ops.tanh_backward(dout, c_tanh)
        d = self.out.backward(store, grads, d, c_out)
        for i in reversed(range(L)):
            lvl = L - 1 - i
            if lvl > 0:
                k = fch[lvl - 1]
                dskip[lvl - 1] = d[:, -k:]
                d = d[:, :-k]
            d = self.dec[i].backward(store, grads, d, dec_c[i])
        dh = d[:, :-1]
        dr = d[:, -1:]
        dp = self.remnant.backward(store, grads, dr, c_rem)
        dh = dh + self.bridge.backward(store, grads, dp, c_bridge)
        for lvl in reversed(range(L)):
            if dskip[lvl] is not None and lvl < L - 1:
                dh = dh + dskip[lvl]
            dh = self.enc[lvl].backward(store, grads, dh, enc_c[lvl])
        return dh, grads


@dataclass(frozen=True)
class DiscriminatorConfig:
    widths: tuple = (8, 16, 32, 64)
    leaky_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or min(self.widths) < 1:
            raise ValueError(f"discriminator widths must be positive, got {self.widths}")

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "leaky_slope": self.leaky_slope}


class Discriminator:
    """Stride-2 conv stages, global average pool, affine, sigmoid."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        self.cfg = cfg
        s = cfg.leaky_slope
        g = _lrelu_gain(s)
        self.stages = []
        cin = 1
        for i, co in enumerate(cfg.widths):
            self.stages.append(ConvBlock(Conv2d(f"d{i}", cin, co, 4, 2, 1, gain=g), co, s))
            cin = co
        self.head = Dense("head", cin, 1)

    @property
    def layers(self):
        return [*self.stages, self.head]

    def init_params(self, seed: int = 0) -> ParamStore:
        manifest, buffers = _collect(self.layers)
        store = ParamStore(manifest, buffers)
        rng = rng_for(seed, 202)
        for layer in self.layers:
            layer.init(store, rng)
        return store

    def forward(self, store, x, train=True):
        """Scores in (0, 1), one per sample."""
        k = 2 ** len(self.stages)
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] % k or x.shape[3] % k:
            raise ShapeError(f"discriminator expects (N, 1, H, W) with H, W divisible by {k}, got {x.shape}")
        h = x
        caches = []
        for blk in self.stages:
            h, c = blk.forward(store, h, train)
            caches.append(c)
        pooled = h.mean(axis=(2, 3))
        logit, c_head = self.head.forward(store, pooled)
        score = ops.sigmoid(logit[:, 0])
        return score, (caches, h.shape, c_head, score, logit[:, 0])

    @staticmethod
    def logits(cache) -> np.ndarray:
        """Pre-sigmoid outputs of the forward pass that produced ``cache``."""
        return cache[4]

    def backward(self, store, dscore, cache, wrt: str = "score"):
        """Back-propagate ``d loss / d score`` (or ``d loss / d logit`` when
        ``wrt="logit"``); returns ``(d input, flat gradients)``."""
        caches, hshape, c_head, score, _ = cache
        grads = store.zeros()
        if wrt == "logit":
            dlogit = np.asarray(dscore, dtype=np.float64)[:, None]
        else:
            dlogit = (np.asarray(dscore) * score * (1 - score))[:, None]
        dpooled = self.head.backward(store, grads, dlogit, c_head)
        n, c, hh, ww = hshape
        dh = np.broadcast_to(dpooled[:, :, None, None] / (hh * ww), hshape).copy()
        for blk, c in zip(reversed(self.stages), reversed(caches)):
            dh = blk.backward(store, grads, dh, c)
        return dh, grads


def remnant_forward(x, store, block: RemnantBlock | None = None, train=True):
    block = block or RemnantBlock("remnant")
    return block.forward(store, x, train)


def generator_forward(x, cfg: RemUNetConfig, store, train=True):
    return RemUNet(cfg).forward(store, x, train)


def discriminator_forward(x, store, cfg: DiscriminatorConfig = DiscriminatorConfig(), train=True):
    return Discriminator(cfg).forward(store, x, train)

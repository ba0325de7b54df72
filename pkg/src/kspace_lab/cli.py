"""Batch command line: ``kspace-lab <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime error. Metrics and loss
reports go to standard output as JSON lines.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .grappa import KernelGeometry
from .kcore import ComplexGrid, Domain, fft2c, ifft2c
from .losses import GrappaLossConfig, LossWeights, PerceptualExtractor, total_loss
from .metrics import image_quality
from .nn import Discriminator
from .phantom import PhantomKind, PhantomSpec, make_phantoms, to_kspace
from .pipeline import (
    GeneratorState,
    Method,
    TrainConfig,
    evaluate,
    generator_input,
    grappa_recon,
    net_recon,
    observed_residual,
    train,
    zero_fill_recon,
)
from .sampling import AcquisitionNoise, Pattern, gen_mask, undersample


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _indexed(path: Path, i: int, count: int) -> Path:
    if count == 1:
        return path
    return path.with_name(f"{path.stem}_{i:03d}{path.suffix}")


def _image_of(grid: ComplexGrid) -> np.ndarray:
    """Real reference image from an image- or k-space CGRID."""
    if grid.domain is Domain.KSPACE:
        grid = ifft2c(grid)
    return np.abs(grid.data)


def _load_generator(ckpt) -> GeneratorState:
    store, conf = io.load_params(ckpt, "generator")
    cfg = TrainConfig.from_dict(conf)
    return GeneratorState(cfg.generator, store, cfg.refine)


def cmd_phantom(a):
    spec = PhantomSpec(a.kind, (a.size, a.width or a.size), a.count, a.seed)
    out = Path(a.o)
    for i, x in enumerate(make_phantoms(spec)):
        path = _indexed(out, i, a.count)
        grid = to_kspace(x) if a.domain == "kspace" else ComplexGrid.image(x)
        io.write_cgrid(path, grid)
        if a.preview:
            io.write_pgm(path.with_name(path.name + ".pgm"), io.to_uint8(x))


def cmd_mask(a):
    m = gen_mask(a.pattern, a.size, a.width or a.size, a.fraction, a.acs, a.seed)
    io.write_mask(a.o, m)
    print(json.dumps({"sampled": int(m.keep.sum()), "columns": int(m.keep.any(axis=0).sum()),
                      "fraction": float(m.keep.mean())}))


def cmd_undersample(a):
    grid = io.read_cgrid(a.inp)
    if grid.domain is Domain.IMAGE:
        grid = fft2c(grid)
    m = io.read_mask(a.mask)
    io.write_cgrid(a.o, undersample(grid, m, AcquisitionNoise(a.noise_sigma, a.seed)))


def cmd_recon(a):
    y = io.read_cgrid(a.inp)
    if y.domain is not Domain.KSPACE:
        y = fft2c(y)
    m = io.read_mask(a.mask)
    y = undersample(y, m)
    if a.method == "zerofill":
        res = zero_fill_recon(y)
    elif a.method == "grappa":
        res = grappa_recon(y, m)
    else:
        if not a.checkpoint:
            raise UsageError("recon --method net requires --checkpoint")
        res = net_recon(y, m, _load_generator(a.checkpoint), correct=a.correct)
    ref = _image_of(io.read_cgrid(a.metrics)) if a.metrics else None
    io.write_pgm(a.o, io.to_uint8(res.image, ref))
    if a.cgrid:
        io.write_cgrid(a.cgrid, res.complex_image)
    if a.diff:
        if ref is None:
            raise UsageError("--diff needs --metrics reference")
        io.write_pgm(a.diff, io.to_uint8(res.image - ref, symmetric=True))
    line = {"method": res.method.value, **res.meta}
    if ref is not None:
        line.update(image_quality(ref, res.image))
    if a.verify_dc:
        x_g, _ = generator_input(y, m)
        resid = observed_residual(res, x_g, m)
        line["dc_residual"] = resid
        if res.method is not Method.NET_CORRECTED or resid != 0.0:
            print(json.dumps(line))
            raise RuntimeError(f"observed-frequency residual {resid!r} for method {res.method.value}")
    print(json.dumps(line))


def cmd_train(a):
    cfg = TrainConfig.from_json(a.config)
    overrides = {}
    if a.seed is not None:
        overrides["seed"] = a.seed
    if a.noise_sigma is not None:
        overrides["noise_sigma"] = a.noise_sigma
    if a.weights:
        overrides["weights"] = LossWeights.from_json(a.weights)
    if overrides:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides})
    data = make_phantoms(cfg.phantoms)
    out = Path(a.o)
    out.mkdir(parents=True, exist_ok=True)
    history_lines = []

    def log(epoch, rep):
        line = json.dumps({"epoch": epoch, **rep.values()})
        history_lines.append(line)
        print(line, flush=True)

    res = train(data, cfg, log)
    conf = cfg.to_dict()
    io.save_params(out, "generator", res.generator, conf)
    io.save_params(out, "discriminator", res.discriminator, conf)
    (out / "config.json").write_text(cfg.to_json())
    (out / "history.jsonl").write_text("".join(s + "\n" for s in history_lines))


def cmd_evaluate(a):
    gen = _load_generator(a.checkpoint) if a.checkpoint else None
    spec = PhantomSpec(a.kind, (a.size, a.width or a.size), a.count, a.seed)
    data = make_phantoms(spec)
    h, w = spec.dims
    m = io.read_mask(a.mask) if a.mask else gen_mask(a.pattern, h, w, a.fraction, a.acs, a.seed)
    table = evaluate(data, gen, m, noise_sigma=a.noise_sigma or 0.0, seed=a.seed)
    text = table.to_jsonl()
    if a.o:
        Path(a.o).write_text(text)
    sys.stdout.write(text)


def cmd_losses(a):
    x = _image_of(io.read_cgrid(a.inp))
    ref = _image_of(io.read_cgrid(a.ref))
    weights = LossWeights.from_json(a.weights) if a.weights else LossWeights()
    gcfg = None
    if a.acs:
        h, w = ref.shape
        gcfg = GrappaLossConfig.for_shape(h, w, a.acs, geometry=KernelGeometry(accel=2))
        gcfg.refresh(undersample(to_kspace(ref), gcfg.mask))
    d_out = None
    if a.checkpoint:
        store, conf = io.load_params(a.checkpoint, "discriminator")
        dnet = Discriminator(TrainConfig.from_dict(conf).discriminator)
        d_out = float(dnet.forward(store, (2 * x - 1)[None, None], train=False)[0][0])
    rep = total_loss(x, ref, None, gcfg, PerceptualExtractor(a.seed), weights, d_out)
    print(rep.to_json())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kspace-lab", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, fn, help):
        s = sub.add_parser(name, help=help, allow_abbrev=False)
        s.set_defaults(fn=fn)
        return s

    def dims(s, size_default=64):
        s.add_argument("--size", type=int, default=size_default, help="height (and width unless --width)")
        s.add_argument("--width", type=int, default=None)

    s = cmd("phantom", cmd_phantom, "generate phantom CGRID files")
    s.add_argument("--kind", choices=[k.value for k in PhantomKind], default="ellipses")
    dims(s)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--domain", choices=["image", "kspace"], default="kspace")
    s.add_argument("--preview", action="store_true", help="also write <path>.pgm")
    s.add_argument("-o", required=True)

    s = cmd("mask", cmd_mask, "generate a sampling mask (PGM + JSON sidecar)")
    s.add_argument("--pattern", choices=[q.value for q in Pattern], default="gauss1d")
    dims(s)
    s.add_argument("--fraction", type=float, default=0.3)
    s.add_argument("--acs", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", required=True)

    s = cmd("undersample", cmd_undersample, "apply a mask and acquisition noise")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", required=True)

    s = cmd("recon", cmd_recon, "reconstruct undersampled k-space")
    s.add_argument("--method", choices=["zerofill", "grappa", "net"], required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--checkpoint", default=None, help="training output directory (net only)")
    s.add_argument("--correct", action="store_true", help="apply k-space correction (net only)")
    s.add_argument("--verify-dc", action="store_true", help="exit 2 unless observed frequencies match exactly")
    s.add_argument("--metrics", default=None, help="reference CGRID; prints psnr/ssim")
    s.add_argument("--diff", default=None, help="write |recon - reference| PGM with symmetric scale")
    s.add_argument("--cgrid", default=None, help="also write the complex image as CGRID")
    s.add_argument("-o", required=True)

    s = cmd("train", cmd_train, "adversarial training on phantoms")
    s.add_argument("--config", required=True)
    s.add_argument("--weights", default=None, help="loss-weight JSON overriding the config")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--noise-sigma", type=float, default=None)
    s.add_argument("-o", required=True)

    s = cmd("evaluate", cmd_evaluate, "metrics table for all methods")
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--kind", choices=[k.value for k in PhantomKind], default="blobs")
    dims(s)
    s.add_argument("--count", type=int, default=20)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--mask", default=None)
    s.add_argument("--pattern", choices=[q.value for q in Pattern], default="gauss1d")
    s.add_argument("--fraction", type=float, default=0.3)
    s.add_argument("--acs", type=int, default=None)
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("-o", default=None)

    s = cmd("losses", cmd_losses, "loss report for an image against a reference")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--weights", default=None)
    s.add_argument("--acs", type=int, default=None, help="enable GRAPPA terms with this many ACS lines")
    s.add_argument("--checkpoint", default=None, help="training output; adds the adversarial term")
    s.add_argument("--seed", type=int, default=0, help="perceptual extractor seed")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.fn(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except Exception as e:  # noqa: BLE001 - any failure after parsing is a runtime error
        print(f"kspace-lab: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

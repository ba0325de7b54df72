"""Acceptance criteria 1-8, one recorded PASS/FAIL line each.

Run ``pytest tests/test_acceptance.py`` to see the summary section. The
training criterion (7) takes several minutes and is marked ``slow``.
"""

import time

import numpy as np
import pytest
from helpers import fd_network, fd_scalar

from kspace_lab import ComplexGrid, Domain, fft2c, ifft2c
from kspace_lab.grappa import CoilStack, GrappaKernel, KernelGeometry, apply_kernel, estimate_from_mask, make_linear_data
from kspace_lab.kcore import fft2c_array
from kspace_lab.losses import (
    GrappaLossConfig,
    LossWeights,
    PerceptualExtractor,
    loss_adversarial,
    loss_fmag,
    loss_fphase,
    loss_grappa,
    loss_imse,
    loss_perceptual,
    total_loss,
)
from kspace_lab.metrics import PSNR_SENTINEL, psnr, ssim
from kspace_lab.nn import Discriminator, ParamStore, RemnantBlock, RemUNet
from kspace_lab.nn import ops
from kspace_lab.nn.layers import Dense
from kspace_lab.phantom import PhantomSpec, make_phantoms
from kspace_lab.pipeline import GeneratorState, TrainConfig, evaluate, kspace_correct, train
from kspace_lab.sampling import Pattern, gen_mask, rng_for, uniform_mask

REFERENCE_WEIGHTS = LossWeights(alpha=15, beta=0.1, gamma=0.05, delta=0.01, zeta=0.00025, kappa=1e-3)
FD_TOL = 1e-4


def test_criterion_1_fft_contracts(acceptance):
    t0 = time.perf_counter()
    worst_rt = worst_pv = 0.0
    for seed in range(20):
        rng = rng_for(seed, 1000)
        data = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
        x = ComplexGrid(data, Domain.IMAGE)
        y = fft2c(x)
        worst_rt = max(worst_rt, float(np.max(np.abs(ifft2c(y).data - data))))
        e_x, e_y = np.sum(np.abs(data) ** 2), np.sum(np.abs(y.data) ** 2)
        worst_pv = max(worst_pv, abs(e_y - e_x) / e_x)
    dt = time.perf_counter() - t0
    ok = worst_rt < 1e-12 and worst_pv < 1e-10 and dt < 1.0
    acceptance.record(1, "FFT contracts", ok,
                      f"roundtrip {worst_rt:.2e} (<1e-12), Parseval {worst_pv:.2e} (<1e-10), {dt:.2f}s (<1s)")
    assert ok


def test_criterion_2_grappa_oracle(acceptance):
    t0 = time.perf_counter()
    kerr = fill = 0.0
    for coils in (1, 2):
        geom = KernelGeometry(accel=2, coils=coils)
        full, truth = make_linear_data((64, 64), geom, seed=coils)
        m = uniform_mask(64, 64, 2, acs=16)
        y_u = CoilStack(np.where(m.keep, full.data, 0), Domain.KSPACE)
        k = estimate_from_mask(y_u, m, geom, ridge=1e-9)
        kerr = max(kerr, float(np.max(np.abs(k.weights - truth.weights))))
        filled = apply_kernel(y_u, m, k).data
        fill = max(fill, float(np.linalg.norm(filled - full.data) / np.linalg.norm(full.data)))
    dt = time.perf_counter() - t0
    ok = kerr < 1e-8 and fill < 1e-6 and dt < 5.0
    acceptance.record(2, "GRAPPA oracle", ok,
                      f"kernel error {kerr:.2e} (<1e-8), fill NRMSE {fill:.2e} (<1e-6), {dt:.2f}s (<5s)")
    assert ok


def test_criterion_3_kspace_correction(acceptance):
    t0 = time.perf_counter()
    exact = idem = ident = True
    patterns = list(Pattern)
    for seed in range(100):
        rng = rng_for(seed, 1003)
        gen = ComplexGrid.image(rng.uniform(size=(32, 32)))
        x_g = ComplexGrid.image(rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32)))
        m = gen_mask(patterns[seed % len(patterns)], 32, 32, 0.5, acs=8, seed=seed)
        y = kspace_correct(gen, x_g, m)
        y_g = fft2c(x_g).data
        exact &= float(np.linalg.norm(np.where(m.keep, y.data - y_g, 0))) == 0.0
        again = kspace_correct(ifft2c(y), x_g, m)
        idem &= bool(np.array_equal(again.data[m.keep], y.data[m.keep])
                     and np.allclose(again.data, y.data, rtol=0, atol=1e-12))
        ident &= bool(np.array_equal(kspace_correct(x_g, x_g, m).data, y_g))
    dt = time.perf_counter() - t0
    ok = exact and idem and ident and dt < 10.0
    acceptance.record(3, "k-space correction", ok,
                      f"residual exactly 0: {exact}, idempotent: {idem}, identity exact: {ident}, {dt:.2f}s (<10s)")
    assert ok


def _loss_gradient_errors(rng):
    x, t = rng.standard_normal((16, 16)), rng.standard_normal((16, 16))
    geom = KernelGeometry()
    w = (rng.standard_normal((1, 1, geom.unknowns)) + 1j * rng.standard_normal((1, 1, geom.unknowns))) / 5
    gcfg = GrappaLossConfig.for_shape(16, 16, acs=4, kernel=GrappaKernel(geom, w))
    yt = fft2c_array(t)
    ex = PerceptualExtractor(0)
    terms = {
        "imse": lambda a: loss_imse(a, t),
        "fmag": lambda a: loss_fmag(a, t),
        "fphase": lambda a: loss_fphase(a, t),
        "grappa_s": lambda a: (lambda r: (r[0], r[2]))(loss_grappa(a, t, yt, gcfg, 1.0, 0.0)),
        "grappa_k": lambda a: (lambda r: (r[1], r[2]))(loss_grappa(a, t, yt, gcfg, 0.0, 1.0)),
        "perceptual": lambda a: loss_perceptual(a, t, ex),
        "total": lambda a: (lambda r: (r.total, r.grad))(total_loss(a, t, yt, gcfg, ex, REFERENCE_WEIGHTS)),
    }
    errs = {}
    for name, f in terms.items():
        _, g = f(x)
        errs[name] = fd_scalar(lambda a: f(a)[0], x, g, rng, probes=25)
    d = 0.3
    h = 1e-6
    num = (loss_adversarial(d + h)[0] - loss_adversarial(d - h)[0]) / (2 * h)
    errs["adversarial"] = abs(num - loss_adversarial(d)[1]) / abs(num)
    return errs


def _op_check(forward, backward, inputs, rng):
    out, cache = forward(*inputs)
    g = rng.standard_normal(out.shape)
    grads = backward(g, cache)
    worst = 0.0
    for k, (arr, grad) in enumerate(zip(inputs, grads)):
        def f(a, k=k):
            args = list(inputs)
            args[k] = a
            return float(np.sum(forward(*args)[0] * g))

        worst = max(worst, fd_scalar(f, arr, grad, rng, probes=15))
    return worst


def _layer_store(layers, rng):
    manifest = [e for layer in layers for e in layer.manifest()]
    buffers = {k: v for layer in layers for k, v in layer.buffers().items()}
    store = ParamStore(manifest, buffers)
    for layer in layers:
        layer.init(store, rng)
    store.values += 0.1 * rng.standard_normal(store.size)
    return store


def _nn_gradient_errors(rng):
    errs = {}
    x16 = rng.standard_normal((2, 3, 16, 16))
    errs["conv2d"] = _op_check(lambda x, w, b: ops.conv2d_forward(x, w, b, 2, 1), ops.conv2d_backward,
                               [x16, rng.standard_normal((4, 3, 4, 4)), rng.standard_normal(4)], rng)
    errs["conv_transpose2d"] = _op_check(ops.conv_transpose2d_forward, ops.conv_transpose2d_backward,
                                         [rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((3, 2, 4, 4)),
                                          rng.standard_normal(2)], rng)
    for train_mode in (True, False):
        running = (rng.standard_normal(3), rng.uniform(0.5, 2.0, 3))
        errs[f"batchnorm[{'train' if train_mode else 'eval'}]"] = _op_check(
            lambda x, gm, bt: ops.batchnorm_forward(x, gm, bt, (running[0].copy(), running[1].copy()), train_mode),
            ops.batchnorm_backward, [x16, rng.standard_normal(3), rng.standard_normal(3)], rng)
    errs["leaky_relu"] = _op_check(lambda x: ops.leaky_relu_forward(x, 0.2),
                                   lambda g, c: [ops.leaky_relu_backward(g, c)], [x16], rng)
    errs["tanh"] = _op_check(ops.tanh_forward, lambda g, c: [ops.tanh_backward(g, c)], [x16], rng)

    dense = Dense("d", 6, 3)
    sd = _layer_store([dense], rng)

    def dense_bwd(g, c):
        grads = sd.zeros()
        return dense.backward(sd, grads, g, c), grads

    errs["dense"] = fd_network(lambda a: dense.forward(sd, a), dense_bwd, rng.standard_normal((4, 6)), sd, rng)

    blk = RemnantBlock("r")
    sr = _layer_store(blk.layers, rng)

    def blk_bwd(g, c):
        grads = sr.zeros()
        return blk.backward(sr, grads, g, c), grads

    errs["remnant_block"] = fd_network(lambda a: blk.forward(sr, a), blk_bwd, rng.standard_normal((1, 1, 16, 16)),
                                       sr, rng)
    gnet = RemUNet()
    sg = gnet.init_params(5)
    errs["generator"] = fd_network(lambda a: gnet.forward(sg, a), lambda g, c: gnet.backward(sg, g, c),
                                   rng.standard_normal((1, 1, 16, 16)), sg, rng)
    dnet = Discriminator()
    sdn = dnet.init_params(6)
    # batch 4: at 1x1 spatial size a 2-sample batch norm pins outputs to +-1 and leaves only roundoff gradients
    errs["discriminator"] = fd_network(lambda a: dnet.forward(sdn, a), lambda g, c: dnet.backward(sdn, g, c),
                                       rng.standard_normal((4, 1, 16, 16)), sdn, rng)
    z = rng.standard_normal(8)
    h = 1e-6
    num = (ops.sigmoid(z + h) - ops.sigmoid(z - h)) / (2 * h)
    s = ops.sigmoid(z)
    errs["sigmoid"] = float(np.max(np.abs(num - s * (1 - s)) / np.abs(num)))
    return errs


def test_criterion_4_gradient_suite(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    errs = {**_loss_gradient_errors(rng), **_nn_gradient_errors(rng)}
    dt = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = all(e < FD_TOL for e in errs.values()) and dt < 120.0
    acceptance.record(4, "gradient suite", ok,
                      f"{len(errs)} checks, worst {worst} {errs[worst]:.2e} (<1e-4), {dt:.1f}s (<120s)")
    assert ok, errs


def test_criterion_5_mask_contracts(acceptance):
    t0 = time.perf_counter()
    n = 128  # at 64x64 the default 8-line ACS exceeds a 10% column budget
    failures = []
    for pattern in Pattern:
        for frac in (0.1, 0.2, 0.3, 0.4, 0.5):
            for seed in range(10):
                m = gen_mask(pattern, n, n, frac, seed=seed)
                count = int(m.keep.sum())
                if pattern is Pattern.UNIFORM1D:
                    r = int(round(1 / frac))
                    cols = (np.arange(n) - n // 2) % r == 0
                    cols[m.acs.col_slice] = True
                    count_ok = count == int(cols.sum()) * n
                elif pattern is Pattern.GAUSS1D:
                    count_ok = count == int(round(frac * n)) * n
                elif pattern is Pattern.GAUSS2D:
                    count_ok = count == int(round(frac * n * n))
                else:
                    budget = round(frac * n * n)
                    count_ok = abs(count - budget) <= 0.02 * budget
                acs_ok = bool(m.keep[m.acs.row_slice, m.acs.col_slice].all())
                col_ok = m.is_column_constant() if pattern in (Pattern.GAUSS1D, Pattern.UNIFORM1D) else True
                det_ok = bool(np.array_equal(gen_mask(pattern, n, n, frac, seed=seed).keep, m.keep))
                if not (count_ok and acs_ok and col_ok and det_ok):
                    failures.append((pattern.value, frac, seed, count_ok, acs_ok, col_ok, det_ok))
    dt = time.perf_counter() - t0
    ok = not failures and dt < 30.0
    acceptance.record(5, "mask contracts", ok,
                      f"{len(Pattern)} patterns x 5 fractions x 10 seeds at {n}x{n}, "
                      f"{len(failures)} failures, {dt:.1f}s (<30s)")
    assert ok, failures[:5]


def test_criterion_6_metrics(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 200, (64, 64))
    y = rng.uniform(0, 255, (64, 64))
    same = psnr(x, x) == PSNR_SENTINEL and abs(ssim(x, x) - 1.0) < 1e-9
    offset = psnr(x, x + 1.0)
    sym = max(abs(psnr(x, y) - psnr(y, x)), abs(ssim(x, y) - ssim(y, x)))
    dt = time.perf_counter() - t0
    ok = same and abs(offset - 48.1308) < 1e-3 and sym < 1e-12 and dt < 5.0
    acceptance.record(6, "metrics", ok,
                      f"identical -> sentinel/1.0: {same}, offset PSNR {offset:.4f} dB (48.1308 +- 1e-3), "
                      f"asymmetry {sym:.1e} (<1e-12), {dt:.2f}s (<5s)")
    assert ok


@pytest.mark.slow
def test_criterion_7_training_run(acceptance):
    data = make_phantoms(PhantomSpec("blobs", (64, 64), 220, seed=0))
    train_set, held_out = data[:200], data[200:]
    cfg = TrainConfig(epochs=30, batch_size=1, lr=1e-4, weights=REFERENCE_WEIGHTS,
                      mask={"pattern": "gauss1d", "fraction": 0.3}, seed=0)
    t0 = time.perf_counter()
    first = train(train_set, cfg)
    dt = time.perf_counter() - t0
    second = train(train_set, cfg)
    identical = (np.array_equal(first.generator.values, second.generator.values)
                 and np.array_equal(first.discriminator.values, second.discriminator.values)
                 and [r.values() for r in first.history] == [r.values() for r in second.history])
    e1, e30 = first.history[0].total, first.history[-1].total
    mask = cfg.mask.build(64, 64)
    table = evaluate(held_out, GeneratorState(cfg.generator, first.generator, cfg.refine), mask)
    net = table.aggregate("net_corrected")["psnr_mean"]
    zf = table.aggregate("zerofill")["psnr_mean"]
    halved = e30 < 0.5 * e1
    gain = net - zf
    ok = halved and gain >= 1.0 and identical and dt < 900.0
    acceptance.record(7, "desk-scale training", ok,
                      f"epoch-30 total {e30:.1f} vs 0.5 x epoch-1 {0.5 * e1:.1f} ({'ok' if halved else 'not halved'}); "
                      f"NetCorrected {net:.2f} dB vs ZeroFill {zf:.2f} dB, gain {gain:+.2f} dB (>=1.0); "
                      f"rerun identical: {identical}; {dt:.0f}s per run (<900s)")
    assert ok


def test_criterion_8_baseline_ordering(acceptance):
    t0 = time.perf_counter()
    data = make_phantoms(PhantomSpec("ellipses", (64, 64), 20, seed=8))
    m = uniform_mask(64, 64, 2)
    table = evaluate(data, None, m)
    g = table.aggregate("grappa")["psnr_mean"]
    z = table.aggregate("zerofill")["psnr_mean"]
    dt = time.perf_counter() - t0
    ok = g > z and dt < 60.0
    acceptance.record(8, "baseline ordering", ok,
                      f"Grappa {g:.2f} dB vs ZeroFill {z:.2f} dB at R=2 + ACS, {dt:.1f}s (<60s)")
    assert ok

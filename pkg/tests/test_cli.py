import json

import numpy as np
import pytest

from kspace_lab import io
from kspace_lab.cli import main
from kspace_lab.pipeline import TrainConfig


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_help_and_usage_errors(capsys):
    assert run(capsys, "--help")[0] == 0
    assert run(capsys, "recon", "--help")[0] == 0
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys)[0] == 1
    assert run(capsys, "mask", "-o", "m.pgm", "--fraction", "lots")[0] == 1
    assert run(capsys, "mask", "-o", "m.pgm", "--frac", "0.3")[0] == 1  # no abbreviations


def test_mask_example(capsys, tmp_path):
    code, out, _ = run(capsys, "mask", "--pattern", "gauss1d", "--size", 256, "--fraction", 0.3, "--seed", 0,
                       "-o", tmp_path / "m.pgm")
    assert code == 0
    info = json.loads(out)
    assert info["columns"] == 77 and info["sampled"] == 77 * 256
    m = io.read_mask(tmp_path / "m.pgm")
    assert m.keep.shape == (256, 256) and m.keep.sum() == info["sampled"]


def test_mask_budget_error_is_runtime(capsys, tmp_path):
    code, _, err = run(capsys, "mask", "--size", 64, "--fraction", 0.05, "--acs", 8, "-o", tmp_path / "m.pgm")
    assert code == 2 and "error" in err


def _setup(capsys, tmp_path, pattern="uniform1d", fraction=0.5):
    ph = tmp_path / "ph.cgrid"
    assert run(capsys, "phantom", "--kind", "ellipses", "--size", 64, "--preview", "-o", ph)[0] == 0
    assert (tmp_path / "ph.cgrid.pgm").exists()
    mk = tmp_path / "m.pgm"
    assert run(capsys, "mask", "--pattern", pattern, "--size", 64, "--fraction", fraction, "--acs", 8, "-o", mk)[0] == 0
    return ph, mk


def test_recon_methods_and_metrics(capsys, tmp_path):
    ph, mk = _setup(capsys, tmp_path)
    psnrs = {}
    for method in ("zerofill", "grappa"):
        out_pgm = tmp_path / f"{method}.pgm"
        code, out, _ = run(capsys, "recon", "--method", method, "--in", ph, "--mask", mk, "--metrics", ph,
                           "--diff", tmp_path / "d.pgm", "--cgrid", tmp_path / "r.cgrid", "-o", out_pgm)
        assert code == 0
        line = json.loads(out)
        assert line["method"] == method and set(line) >= {"psnr", "ssim"}
        psnrs[method] = line["psnr"]
        assert io.read_pgm(out_pgm).shape == (64, 64)
        assert io.read_cgrid(tmp_path / "r.cgrid").shape == (64, 64)
    assert psnrs["grappa"] > psnrs["zerofill"]


def test_undersample_and_phantom_count(capsys, tmp_path):
    assert run(capsys, "phantom", "--kind", "blobs", "--count", 3, "--domain", "image", "-o", tmp_path / "b.cgrid")[0] == 0
    files = sorted(p.name for p in tmp_path.glob("b_*.cgrid"))
    assert files == ["b_000.cgrid", "b_001.cgrid", "b_002.cgrid"]
    assert run(capsys, "mask", "--size", 64, "--acs", 8, "-o", tmp_path / "m.pgm")[0] == 0
    code, _, _ = run(capsys, "undersample", "--in", tmp_path / "b_000.cgrid", "--mask", tmp_path / "m.pgm",
                     "--noise-sigma", 0.01, "-o", tmp_path / "u.cgrid")
    assert code == 0
    y = io.read_cgrid(tmp_path / "u.cgrid")
    keep = io.read_mask(tmp_path / "m.pgm").keep
    assert not y.data[~keep].any() and y.data[keep].all()


def test_missing_input_names_path(capsys, tmp_path):
    code, _, err = run(capsys, "recon", "--method", "zerofill", "--in", tmp_path / "ghost.cgrid",
                       "--mask", tmp_path / "m.pgm", "-o", tmp_path / "o.pgm")
    assert code == 2 and "ghost.cgrid" in err


def test_net_requires_checkpoint(capsys, tmp_path):
    ph, mk = _setup(capsys, tmp_path)
    assert run(capsys, "recon", "--method", "net", "--in", ph, "--mask", mk, "-o", tmp_path / "o.pgm")[0] == 1


def _tiny_config(tmp_path):
    cfg = TrainConfig(epochs=1, mask={"fraction": 0.5, "acs": 12},
                      phantoms={"kind": "blobs", "dims": [32, 32], "count": 3})
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    return path


def test_train_recon_verify_and_losses(capsys, tmp_path):
    cfg = _tiny_config(tmp_path)
    code, out, _ = run(capsys, "train", "--config", cfg, "--seed", 4, "-o", tmp_path / "run1")
    assert code == 0
    first = json.loads(out.splitlines()[0])
    assert first["epoch"] == 0 and "total" in first
    for name in ("generator.json", "generator.bin", "discriminator.json", "discriminator.bin", "config.json",
                 "history.jsonl"):
        assert (tmp_path / "run1" / name).exists()
    assert TrainConfig.from_json(tmp_path / "run1" / "config.json").seed == 4
    assert run(capsys, "train", "--config", cfg, "--seed", 4, "-o", tmp_path / "run2")[0] == 0
    for name in ("generator.bin", "discriminator.bin", "history.jsonl"):
        assert (tmp_path / "run1" / name).read_bytes() == (tmp_path / "run2" / name).read_bytes()

    ph = tmp_path / "ph.cgrid"
    run(capsys, "phantom", "--kind", "blobs", "--size", 32, "-o", ph)
    mk = tmp_path / "m.pgm"
    run(capsys, "mask", "--size", 32, "--fraction", 0.5, "--acs", 12, "-o", mk)
    ck = tmp_path / "run1"
    code, out, _ = run(capsys, "recon", "--method", "net", "--checkpoint", ck, "--correct", "--verify-dc",
                       "--in", ph, "--mask", mk, "--metrics", ph, "-o", tmp_path / "n.pgm")
    assert code == 0 and json.loads(out)["dc_residual"] == 0.0
    code, _, err = run(capsys, "recon", "--method", "net", "--checkpoint", ck, "--verify-dc",
                       "--in", ph, "--mask", mk, "-o", tmp_path / "n.pgm")
    assert code == 2 and "residual" in err

    code, out, _ = run(capsys, "losses", "--in", ph, "--ref", ph, "--acs", 12, "--checkpoint", ck)
    rep = json.loads(out)
    assert code == 0 and rep["imse"] == 0 and rep["fmag"] == 0 and rep["adversarial"] > 0
    assert rep["total"] == pytest.approx(rep["adversarial"] + 0.01 * rep["grappa_s"] + 0.00025 * rep["grappa_k"])

    code, out, _ = run(capsys, "evaluate", "--checkpoint", ck, "--size", 32, "--count", 2, "--fraction", 0.5,
                       "--acs", 12, "-o", tmp_path / "eval.jsonl")
    rows = [json.loads(s) for s in out.splitlines()]
    assert code == 0 and len(rows) == 8 + 4
    assert (tmp_path / "eval.jsonl").read_text() == out


def test_losses_with_weights_file(capsys, tmp_path):
    ph, _ = _setup(capsys, tmp_path)
    run(capsys, "phantom", "--kind", "ellipses", "--size", 64, "--seed", 1, "-o", tmp_path / "q.cgrid")
    w = tmp_path / "w.json"
    w.write_text(json.dumps({"alpha": 1, "beta": 0, "gamma": 0, "delta": 0, "zeta": 0, "kappa": 0}))
    code, out, _ = run(capsys, "losses", "--in", tmp_path / "q.cgrid", "--ref", ph, "--weights", w)
    rep = json.loads(out)
    assert code == 0 and rep["total"] == pytest.approx(rep["imse"]) and rep["imse"] > 0
    assert np.isfinite(rep["perceptual"])

"""Acceptance checks; each prints one PASS/FAIL line with the measured numbers."""
import json
import time

import numpy as np
import pytest

from layerforge import assets, cli
from layerforge import imagecore as ic
from layerforge import metrics as m
from layerforge import nnmodel as nn
from layerforge import trainer as tr
from layerforge.compositor import SynthConfig, recombine, synth_sample

from test_metrics import dense_ssim

FIXTURES = __import__("pathlib").Path(__file__).parent / "fixtures"


def report(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, detail


def test_metric_oracles(capsys):
    t0 = time.perf_counter()
    gt = np.full((32, 32, 3), 0.3, np.float64)
    p1 = m.psnr_color(gt + 0.1, gt)
    p5 = m.psnr_color(gt + 0.5, gt)
    rng = np.random.default_rng(0)
    x = rng.random((32, 32, 3))
    self_ssim = m.ssim(x, x)
    worst = 0.0
    for _ in range(20):
        a, b = rng.random((32, 32, 3)), rng.random((32, 32, 3))
        b = 0.5 * a + 0.5 * b
        worst = max(worst, abs(m.ssim(a, b) - dense_ssim(m.to_luminance(a), m.to_luminance(b))))
    dt = time.perf_counter() - t0
    ok = abs(p1 - 20.0) <= 1e-6 and abs(p5 - 6.0206) <= 1e-3 and abs(self_ssim - 1.0) <= 1e-9
    ok = ok and worst <= 1e-6 and dt < 5
    detail = f"psnr(0.1)={p1:.9f} psnr(0.5)={p5:.6f} ssim(x,x)={self_ssim:.12f} max|ssim-dense|={worst:.2e} t={dt:.2f}s"
    report(capsys, "metric oracles", ok, detail)


def test_recombination_identity(capsys):
    t0 = time.perf_counter()
    lib = assets.procedural_library(0)
    cfg = SynthConfig(output_size=(128, 128))
    worst = 0.0
    for seed in range(100):
        s = synth_sample(assets.gen_text_page(seed, 160, 160), lib, seed, cfg)
        worst = max(worst, float(np.max(np.abs(recombine(s.layer0, s.layer1, s.alpha_map) - s.composite))))
    dt = time.perf_counter() - t0
    report(capsys, "recombination identity", worst <= 1e-5 and dt < 30, f"max L_inf={worst:.2e} over 100 samples, t={dt:.1f}s")


def model_loss(model, x, g0, g1):
    return nn.total_loss(nn.forward(model, x), g0, g1)[0].total


def finite_difference_check(seed=1, eps=1e-3):
    rng = np.random.default_rng(seed)
    model = nn.init_model(nn.ModelConfig(4), seed=seed, dtype=np.float64)
    x = rng.random((1, 3, 16, 16))
    g0, g1 = rng.random((1, 3, 16, 16)), rng.random((1, 3, 16, 16))
    cache = {}
    _, grad = nn.total_loss(nn.forward(model, x, cache), g0, g1)
    analytic = nn.backward(model, cache, grad)
    num = {}
    for k, p in model.params.items():
        num[k] = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            hi = model_loss(model, x, g0, g1)
            p[idx] = old - eps
            lo = model_loss(model, x, g0, g1)
            p[idx] = old
            num[k][idx] = (hi - lo) / (2 * eps)
    a = np.concatenate([analytic[k].ravel() for k in model.params])
    n = np.concatenate([num[k].ravel() for k in model.params])
    return a, n


def test_gradient_check(capsys):
    t0 = time.perf_counter()
    a, n = finite_difference_check()
    dt = time.perf_counter() - t0
    mask = np.abs(a) > 1e-6
    rel = np.abs(a[mask] - n[mask]) / np.maximum(np.abs(a[mask]), np.abs(n[mask]))
    cos = 1.0 - float(a @ n / (np.linalg.norm(a) * np.linalg.norm(n)))
    bad = int(np.sum(rel > 1e-2))
    ok = bad == 0 and cos <= 1e-3 and dt < 120
    detail = (
        f"max rel={rel.max():.3e} ({bad}/{mask.sum()} entries > 1e-2), "
        f"cosine distance={cos:.2e}, t={dt:.1f}s"
    )
    report(capsys, "gradient correctness", ok, detail)


def test_loss_contract(capsys):
    rng = np.random.default_rng(0)
    exact, zero_iff = True, True
    for _ in range(200):
        out = rng.normal(size=(2, 6, 8, 8)).astype(np.float32)
        g0, g1 = rng.random((2, 3, 8, 8)).astype(np.float32), rng.random((2, 3, 8, 8)).astype(np.float32)
        lb, _ = nn.total_loss(out, g0, g1)
        exact &= lb.total == lb.loss_l0 + lb.loss_l1
        zero_iff &= lb.loss_l0 > 0 and lb.loss_l1 > 0
        same = nn.total_loss(np.concatenate([g0, g1], axis=1), g0, g1)[0]
        zero_iff &= same.loss_l0 == 0 and same.loss_l1 == 0 and same.total == 0
        nudged = np.concatenate([g0, g1], axis=1)
        nudged[0, 4, 1, 1] += 1e-3
        lb = nn.total_loss(nudged, g0, g1)[0]
        zero_iff &= lb.loss_l0 == 0 and lb.loss_l1 > 0
    report(capsys, "loss contract", exact and zero_iff, f"bit-exact sum={exact}, zero iff equal={zero_iff} (200 draws)")


def overfit_data():
    cfg = SynthConfig(output_size=(64, 64))
    lib = assets.procedural_library(0, size=cfg.sprite_size)

    def make(i):
        return synth_sample(assets.gen_text_page(i, 64, 64), lib, i, cfg)

    return [make(i) for i in range(8)], [make(100 + i) for i in range(4)]


def full_loss(model, samples):
    x = tr._stack(samples, "input")
    return model_loss(model, x, tr._stack(samples, "layer0"), tr._stack(samples, "layer1"))


@pytest.mark.slow
def test_overfit_convergence(capsys):
    train, val = overfit_data()
    cfg = tr.TrainConfig(steps=2000, batch=8, crop=64, seed=0, val_every=100)
    t0 = time.perf_counter()
    ck = tr.train(train, val, cfg)
    dt = time.perf_counter() - t0
    init = full_loss(nn.init_model(nn.ModelConfig(cfg.base_channels), seed=cfg.seed), train)
    final = full_loss(ck.last, train)
    _, _, recs = tr.validate(ck.last, train)
    ssim0 = tr.mean_records(recs, "L0")["ssim"]
    ssim1 = tr.mean_records(recs, "L1")["ssim"]
    psnr_b0 = tr.mean_records(tr.validate(ck.best_l0, val)[2], "L0")["psnr_color"]
    psnr_b1 = tr.mean_records(tr.validate(ck.best_l1, val)[2], "L0")["psnr_color"]
    checks = {
        "loss": final < 0.05 * init,
        "ssim_l0": ssim0 >= 0.85,
        "ssim_l1": ssim1 >= 0.80,
        "ordering": psnr_b0 >= psnr_b1,
        "runtime": dt < 900,
    }
    detail = (
        f"loss {init:.4f}->{final:.4f} (ratio {final / init:.4f}), train SSIM L0={ssim0:.4f} L1={ssim1:.4f}, "
        f"val L0 PSNR best_l0={psnr_b0:.3f} (step {ck.best_l0_step}) vs best_l1={psnr_b1:.3f} "
        f"(step {ck.best_l1_step}), t={dt:.0f}s; failed={[k for k, v in checks.items() if not v]}"
    )
    report(capsys, "overfit convergence", all(checks.values()), detail)


def test_determinism(capsys, tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    for i in range(2):
        ic.save_png(assets.gen_text_page(i, 64, 64), src / f"p{i}.png")
    (tmp_path / "cfg.json").write_text(json.dumps({"output_size": [32, 32]}))
    files = {}
    for run in ("a", "b"):
        out = tmp_path / run
        cli.main(["synth", "--sources", str(src), "--out", str(out / "ds"), "--config", str(tmp_path / "cfg.json"),
                  "--count", "5", "--seed", "11"])
        cli.main(["train", "--manifest", str(out / "ds" / "manifest.jsonl"), "--out", str(out / "run"),
                  "--steps", "6", "--val-every", "3", "--crop", "32", "--batch", "2", "--base-channels", "4",
                  "--val-frac", "0.2", "--seed", "5"])
        files[run] = {
            p.relative_to(out).as_posix(): p.read_bytes()
            for p in sorted(out.rglob("*"))
            if p.is_file()
        }
    same = files["a"] == files["b"]
    report(capsys, "determinism", same and len(files["a"]) == 27, f"{len(files['a'])} files compared, identical={same}")


def test_report_regression(capsys, tmp_path):
    inputs = [str(FIXTURES / "reference_rows" / f) for f in ("docres.json", "best_l0.json", "best_l1.json")]
    out = tmp_path / "t.md"
    cli.main(["report", "--inputs", *inputs, "--out", str(out)])
    rows = out.read_text().splitlines()[2:]
    cells = [c.strip(" |") for r in rows for c in r.split(" | ")]
    bold = sorted(c for c in cells if c.startswith("**"))
    under = sorted(c for c in cells if c.startswith("<u>"))
    ok = bold == sorted(["**23.4026**", "**25.0724**", "**0.9273**"]) and under == sorted(
        ["<u>21.8596</u>", "<u>23.3913</u>", "<u>0.9145</u>"]
    )
    report(capsys, "report regression", ok, f"bold={bold} underline={under}")


def test_shape_contract(capsys):
    model = nn.init_model(nn.ModelConfig(4), seed=0)
    sizes = (16, 64, 128)
    ok, seen = True, []
    for h in sizes:
        for w in sizes:
            cache = {}
            out = nn.forward(model, np.zeros((1, 3, h, w), np.float32), cache)
            b = cache["bottleneck"].shape
            ok &= out.shape == (1, 6, h, w) and b == (1, 32, h // 8, w // 8)
            seen.append(f"{h}x{w}")
    report(capsys, "shape contract", ok, f"checked {len(seen)} sizes ({', '.join(seen)})")

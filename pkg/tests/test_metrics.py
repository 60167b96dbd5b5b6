import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layerforge import metrics as m

REFERENCE_ROWS = [
    ("DocRes", 21.2469, 22.8686, 0.9145),
    ("Ours (Best_L0)", 23.4026, 25.0724, 0.9273),
    ("Ours (Best_L1)", 21.8596, 23.3913, 0.9034),
]


def dense_ssim(x, y):
    """Direct per-window SSIM with an explicit 2-D Gaussian window."""
    x = x.astype(np.float64)
    y = y.astype(np.float64)
    n, sigma = 11, 1.5
    r = np.arange(n) - 5
    w = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma**2))
    w /= w.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(x.shape[0] - n + 1):
        for j in range(x.shape[1] - n + 1):
            px, py = x[i : i + n, j : j + n], y[i : i + n, j : j + n]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * (px - mx) ** 2).sum()
            vy = (w * (py - my) ** 2).sum()
            cxy = (w * (px - mx) * (py - my)).sum()
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def rand_img(seed, h=32, w=32):
    return np.random.default_rng(seed).random((h, w, 3)).astype(np.float32)


def test_mse_examples():
    a = np.zeros((2, 2, 3), np.float32)
    assert m.mse(a, a) == 0.0
    assert m.mse(a, a + 0.5) == pytest.approx(0.25)


def test_mse_shape_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        m.mse(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


@pytest.mark.parametrize("offset, expected", [(0.1, 20.0), (0.5, 10 * math.log10(4)), (0.01, 40.0)])
def test_psnr_uniform_offsets(offset, expected):
    gt = np.full((8, 8, 3), 0.2, np.float64)
    assert m.psnr_color(gt + offset, gt) == pytest.approx(expected, abs=1e-6)


def test_psnr_identical_is_capped():
    img = rand_img(0)
    assert m.psnr_color(img, img) == m.PSNR_CAP
    assert m.psnr_illum(img, img) == m.PSNR_CAP


def test_psnr_illum_red_shift():
    gt = np.full((4, 4, 3), 0.5, np.float64)
    pred = gt.copy()
    pred[..., 0] += 0.1
    # luma moves by 0.299 * 0.1
    assert m.psnr_illum(pred, gt) == pytest.approx(-20 * math.log10(0.0299), abs=1e-6)
    assert m.psnr_color(pred, gt) == pytest.approx(10 * math.log10(3 / 0.01), abs=1e-6)


def test_gaussian_window():
    g = m.gaussian_window()
    assert g.shape == (11,) and g.sum() == pytest.approx(1.0)
    assert g[5] == g.max()
    np.testing.assert_allclose(g, g[::-1])


def test_ssim_identical():
    img = rand_img(1)
    assert m.ssim(img, img) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_ssim_matches_dense(seed):
    a, b = rand_img(2 * seed), rand_img(2 * seed + 1)
    b = 0.5 * a + 0.5 * b  # correlated pair for a non-trivial value
    ref = dense_ssim(m.to_luminance(a), m.to_luminance(b))
    assert m.ssim(a, b) == pytest.approx(ref, abs=1e-6)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        m.ssim(rand_img(0, 8, 8), rand_img(1, 8, 8))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_ssim_symmetric_bounded_flip_invariant(seed):
    a, b = rand_img(seed, 16, 20), rand_img(seed + 1, 16, 20)
    s = m.ssim(a, b)
    assert s == pytest.approx(m.ssim(b, a), abs=1e-12)
    assert -1.0 <= s <= 1.0
    assert m.ssim(a[::-1, ::-1], b[::-1, ::-1]) == pytest.approx(s, abs=1e-9)


def test_ssim_degrades_with_noise():
    a = rand_img(3)
    rng = np.random.default_rng(4)
    noisy1 = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    noisy2 = np.clip(a + rng.normal(0, 0.3, a.shape), 0, 1)
    assert 1.0 > m.ssim(noisy1, a) > m.ssim(noisy2, a)


def test_layer_correlation():
    a = rand_img(5)
    assert m.layer_correlation(a, a) == pytest.approx(1.0)
    assert m.layer_correlation(a, 1.0 - a) == pytest.approx(-1.0)
    assert m.layer_correlation(a, np.ones_like(a)) == 0.0
    assert abs(m.layer_correlation(rand_img(6, 64, 64), rand_img(7, 64, 64))) < 0.1


def test_evaluate_pair_layers():
    g0, g1 = rand_img(8), rand_img(9)
    recs = m.evaluate_pair((g0, g1), (g0, g1))
    assert [r.layer for r in recs] == list(m.LAYERS)
    assert all(r.psnr_color == m.PSNR_CAP and r.ssim == pytest.approx(1.0) for r in recs)
    recs = m.evaluate_pair((g0, g1 * 0.5), (g0, g1))
    assert recs[0].psnr_color == m.PSNR_CAP and recs[1].psnr_color < 40


def test_aggregate_means():
    recs = [m.MetricsRecord("L0", 20.0, 22.0, 0.8), m.MetricsRecord("L0", 30.0, 24.0, 0.9)]
    row = m.aggregate({"x": recs}).rows[0]
    assert (row.psnr_color, row.psnr_illum, row.count) == (25.0, 23.0, 2)
    assert row.ssim == pytest.approx(0.85)
    with pytest.raises(ValueError):
        m.aggregate({"x": []})


def test_rank_styles():
    assert m.rank_styles([1.0, 3.0, 2.0]) == ["", "best", "second"]
    assert m.rank_styles([2.0, 2.0, 1.0]) == ["best", "best", "second"]
    assert m.rank_styles([5.0]) == ["best"]


def test_render_reference_rows():
    report = m.AggregateReport([m.ReportRow(*row) for row in REFERENCE_ROWS])
    lines = m.render_markdown(report).splitlines()
    assert lines[0] == "| Method | PSNR(color) ↑ | PSNR(ilum) ↑ | SSIM ↑ |"
    assert lines[2] == "| DocRes | 21.2469 | 22.8686 | <u>0.9145</u> |"
    assert lines[3] == "| Ours (Best_L0) | **23.4026** | **25.0724** | **0.9273** |"
    assert lines[4] == "| Ours (Best_L1) | <u>21.8596</u> | <u>23.3913</u> | 0.9034 |"

"""Layer-separation quality metrics and comparison-table reporting."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagecore import to_luminance

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
LAYERS = ("L0", "L1", "combined")
COLUMNS = (("psnr_color", "PSNR(color) ↑"), ("psnr_illum", "PSNR(ilum) ↑"), ("ssim", "SSIM ↑"))


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    _same_shape(a, b)
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def _psnr(err: float) -> float:
    if err < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / err))


def psnr_color(pred: np.ndarray, gt: np.ndarray) -> float:
    return _psnr(mse(pred, gt))


def psnr_illum(pred: np.ndarray, gt: np.ndarray) -> float:
    _same_shape(pred, gt)
    return _psnr(mse(to_luminance(pred), to_luminance(gt)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = len(g)
    x = sliding_window_view(x, n, axis=0) @ g
    return sliding_window_view(x, n, axis=1) @ g


def ssim_gray(x: np.ndarray, y: np.ndarray) -> float:
    _same_shape(x, y)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    x = x.astype(np.float64)
    y = y.astype(np.float64)
    g = gaussian_window()
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    """Gaussian-window SSIM on the luminance planes (valid windows only)."""
    _same_shape(pred, gt)
    return ssim_gray(to_luminance(pred), to_luminance(gt))


def layer_correlation(l0: np.ndarray, l1: np.ndarray) -> float:
    """Pearson correlation of the luminance planes; 0 if either is constant."""
    _same_shape(l0, l1)
    a = to_luminance(l0).astype(np.float64).ravel()
    b = to_luminance(l1).astype(np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


@dataclass
class MetricsRecord:
    layer: str
    psnr_color: float
    psnr_illum: float
    ssim: float

    def to_json(self) -> dict:
        return asdict(self)


def image_metrics(pred: np.ndarray, gt: np.ndarray, layer: str) -> MetricsRecord:
    return MetricsRecord(layer, psnr_color(pred, gt), psnr_illum(pred, gt), ssim(pred, gt))


def evaluate_pair(pred, gt) -> list[MetricsRecord]:
    """Metrics for L0, L1 and the pixelwise mean of both layers."""
    (p0, p1), (g0, g1) = pred, gt
    for a in (p1, g0, g1):
        _same_shape(p0, a)
    pm = (p0.astype(np.float64) + p1) / 2.0
    gm = (g0.astype(np.float64) + g1) / 2.0
    return [
        image_metrics(p0, g0, "L0"),
        image_metrics(p1, g1, "L1"),
        image_metrics(pm, gm, "combined"),
    ]


@dataclass
class ReportRow:
    method: str
    psnr_color: float
    psnr_illum: float
    ssim: float
    count: int = 1


@dataclass
class AggregateReport:
    rows: list[ReportRow]

    def to_json(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows]}


def aggregate(groups: dict[str, list[MetricsRecord]]) -> AggregateReport:
    """Arithmetic mean of each metric per group."""
    rows = []
    for name, records in groups.items():
        if not records:
            raise ValueError(f"empty group {name!r}")
        rows.append(
            ReportRow(
                name,
                float(np.mean([r.psnr_color for r in records])),
                float(np.mean([r.psnr_illum for r in records])),
                float(np.mean([r.ssim for r in records])),
                len(records),
            )
        )
    return AggregateReport(rows)


def rank_styles(values: list[float]) -> list[str]:
    """'best' / 'second' / '' per value; higher is better, ties share a style."""
    distinct = sorted(set(values), reverse=True)
    styles = []
    for v in values:
        if v == distinct[0]:
            styles.append("best")
        elif len(distinct) > 1 and v == distinct[1]:
            styles.append("second")
        else:
            styles.append("")
    return styles


def _styled(text: str, style: str) -> str:
    if style == "best":
        return f"**{text}**"
    if style == "second":
        return f"<u>{text}</u>"
    return text


def render_markdown(report: AggregateReport, digits: int = 4) -> str:
    """Markdown table: best value per column bold, second best underlined."""
    header = "| Method | " + " | ".join(label for _, label in COLUMNS) + " |"
    sep = "|" + "---|" * (len(COLUMNS) + 1)
    styles = {
        key: rank_styles([round(getattr(r, key), digits) for r in report.rows]) for key, _ in COLUMNS
    }
    lines = [header, sep]
    for i, r in enumerate(report.rows):
        cells = [_styled(f"{getattr(r, key):.{digits}f}", styles[key][i]) for key, _ in COLUMNS]
        lines.append(f"| {r.method} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"

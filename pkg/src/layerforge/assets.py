"""Overlay object vocabulary: file-backed and procedural sprites.

Every generator is a pure function of its arguments. Randomness comes from a
Philox counter-based stream keyed by ``(seed, category)``, so generators
never share state.
"""
from __future__ import annotations

import colorsys
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagecore import DTYPE, ImageError, check_sprite, load_sprite_png

CATEGORIES = ("stamp", "signature", "barcode", "qr", "photo", "watermark_word")
_CATEGORY_KEYS = {c: i for i, c in enumerate(CATEGORIES)}

WATERMARK_GRAY = 0.75
WATERMARK_WORDS = ("COPY", "DRAFT", "VOID", "PAID", "CONFIDENTIAL", "SAMPLE", "ORIGINAL", "FILE 2024")


class AssetError(ValueError):
    pass


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent deterministic RNG stream for ``seed`` and an integer key path."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *key])))


@dataclass(frozen=True)
class OverlayAsset:
    category: str
    sprite: np.ndarray = field(repr=False)
    source: str = "procedural"

    def __post_init__(self):
        if self.category not in _CATEGORY_KEYS:
            raise AssetError(f"unknown category {self.category!r}")
        check_sprite(self.sprite)


@dataclass
class AssetLibrary:
    assets: list[OverlayAsset]
    index: dict[str, list[int]] = field(init=False)

    def __post_init__(self):
        if not self.assets:
            raise AssetError("empty library")
        self.index = {}
        for i, a in enumerate(self.assets):
            self.index.setdefault(a.category, []).append(i)

    def __len__(self):
        return len(self.assets)

    def counts(self) -> dict[str, int]:
        return {c: len(v) for c, v in self.index.items()}

    def require(self, categories) -> None:
        missing = [c for c in categories if not self.index.get(c)]
        if missing:
            raise AssetError(f"empty library for categories: {', '.join(missing)}")


def load_asset_dir(path: str | os.PathLike) -> AssetLibrary:
    """Read ``<root>/<category>/<name>.png`` sprites in lexicographic order."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(str(root))
    assets = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        if sub.name not in _CATEGORY_KEYS:
            raise AssetError(f"unknown category directory {sub.name!r}")
        for png in sorted(sub.glob("*.png")):
            try:
                sprite = load_sprite_png(png)
            except ImageError as exc:
                raise AssetError(f"undecodable asset {png}: {exc}") from exc
            assets.append(OverlayAsset(sub.name, sprite, source=f"file:{sub.name}/{png.name}"))
    if not assets:
        raise AssetError("empty library")
    return AssetLibrary(assets)


def _sprite(h: int, w: int, rgb=(1.0, 1.0, 1.0), alpha: float = 0.0) -> np.ndarray:
    s = np.empty((h, w, 4), dtype=DTYPE)
    s[:, :, :3] = rgb
    s[:, :, 3] = alpha
    return s


def gen_barcode(seed: int, width: int, height: int) -> OverlayAsset:
    """1-D barcode: black bars of width 1-4 px on an opaque white quiet zone."""
    if width < 16 or height < 8:
        raise AssetError("barcode needs width >= 16 and height >= 8")
    rng = stream(seed, _CATEGORY_KEYS["barcode"])
    quiet = max(2, width // 16)
    cols = np.ones(width, dtype=DTYPE)
    x = quiet
    black = True
    while x < width - quiet:
        run = int(rng.integers(1, 5))
        end = min(x + run, width - quiet)
        if black:
            cols[x:end] = 0.0
        x = end
        black = not black
    s = _sprite(height, width, alpha=1.0)
    s[:, :, :3] = cols[None, :, None]
    return OverlayAsset("barcode", s)


FINDER = np.array(
    [[0, 0, 0], [0, 1, 0], [0, 0, 0]], dtype=DTYPE
)  # 3x3 module finder: dark ring, light center


def gen_qr_like(seed: int, modules: int, module_px: int = 2) -> OverlayAsset:
    """Non-decodable QR lookalike with three 3x3 corner finder squares."""
    if modules < 9:
        raise AssetError("qr-like code needs at least 9 modules")
    if module_px < 1:
        raise AssetError("module_px must be >= 1")
    rng = stream(seed, _CATEGORY_KEYS["qr"])
    grid = (rng.random((modules, modules)) < 0.5).astype(DTYPE)
    for r, c in qr_finder_origins(modules):
        grid[r : r + 3, c : c + 3] = FINDER
    img = np.kron(grid, np.ones((module_px, module_px), dtype=DTYPE))
    s = _sprite(*img.shape, alpha=1.0)
    s[:, :, :3] = img[:, :, None]
    return OverlayAsset("qr", s)


def qr_finder_origins(modules: int) -> list[tuple[int, int]]:
    return [(0, 0), (0, modules - 3), (modules - 3, 0)]


STAMP_HUES = {"red": 0.0, "blue": 2.0 / 3.0, "violet": 0.78}


def gen_stamp(seed: int, radius: int) -> OverlayAsset:
    """Circular rubber stamp: two concentric rings plus radial ticks."""
    if radius < 16:
        raise AssetError("stamp radius must be >= 16")
    rng = stream(seed, _CATEGORY_KEYS["stamp"])
    hue = STAMP_HUES[("red", "blue", "violet")[int(rng.integers(3))]]
    sat = float(rng.uniform(0.7, 1.0))
    val = float(rng.uniform(0.55, 0.85))
    ink = colorsys.hsv_to_rgb(hue, sat, val)
    stroke = int(rng.integers(2, 5))
    n_ticks = int(rng.integers(8, 17))
    gap = max(stroke + 2, radius // 4)

    size = 2 * radius + 1
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) - radius
    rr = np.hypot(xx, yy)
    outer = (rr <= radius) & (rr > radius - stroke)
    r_in = radius - gap
    inner = (rr <= r_in) & (rr > r_in - stroke)
    ang = np.mod(np.arctan2(yy, xx), 2 * np.pi)
    phase = float(rng.uniform(0, 2 * np.pi / n_ticks))
    step = 2 * np.pi / n_ticks
    # angular distance to the nearest tick, measured as arc length
    d = np.abs(np.mod(ang - phase + step / 2, step) - step / 2) * rr
    ticks = (rr > r_in) & (rr <= radius - stroke) & (d < stroke / 2.0)
    mask = outer | inner | ticks
    s = _sprite(size, size, rgb=ink, alpha=0.0)
    s[:, :, 3] = mask.astype(DTYPE)
    return OverlayAsset("stamp", s)


def _bezier(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    u = 1 - t
    return (
        (u**3)[:, None] * p[0]
        + (3 * u * u * t)[:, None] * p[1]
        + (3 * u * t * t)[:, None] * p[2]
        + (t**3)[:, None] * p[3]
    )


def gen_signature(seed: int, width: int, height: int) -> OverlayAsset:
    """Handwriting-like scrawl of 2-4 chained cubic Bezier strokes."""
    if width < 32 or height < 16:
        raise AssetError("signature needs width >= 32 and height >= 16")
    rng = stream(seed, _CATEGORY_KEYS["signature"])
    n = int(rng.integers(2, 5))
    thickness = float(rng.uniform(1.0, 2.0))
    ink = np.array([0.05, 0.05, 0.1]) + rng.uniform(0.0, 0.15, 3) * np.array([1.0, 1.0, 2.0])
    ink = np.clip(ink, 0.0, 0.3)

    margin = 3.0
    lo = np.array([margin, margin])
    hi = np.array([width - 1 - margin, height - 1 - margin])
    start = np.array([margin, rng.uniform(lo[1], hi[1])])
    seg_w = (hi[0] - lo[0]) / n
    pts = []
    for k in range(n):
        end = np.array([lo[0] + (k + 1) * seg_w, rng.uniform(lo[1], hi[1])])
        c1 = np.clip(start + rng.uniform([-0.2, -0.6], [0.8, 0.6]) * [seg_w, height], lo, hi)
        c2 = np.clip(end + rng.uniform([-0.8, -0.6], [0.2, 0.6]) * [seg_w, height], lo, hi)
        ctrl = np.stack([start, c1, c2, end])
        pts.append(_bezier(ctrl, np.linspace(0.0, 1.0, 8 * int(seg_w) + 16)))
        start = end
    path = np.concatenate(pts)

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    grid = np.stack([xx.ravel() + 0.5, yy.ravel() + 0.5], axis=1)
    dist = np.full(grid.shape[0], np.inf)
    for chunk in np.array_split(path, max(1, len(path) // 64)):
        d = np.sqrt(((grid[:, None, :] - chunk[None, :, :]) ** 2).sum(-1)).min(axis=1)
        dist = np.minimum(dist, d)
    # one-pixel linear falloff gives antialiased edges
    alpha = np.clip(thickness / 2.0 + 0.5 - dist, 0.0, 1.0).reshape(height, width)
    s = _sprite(height, width, rgb=ink, alpha=0.0)
    s[:, :, 3] = alpha
    return OverlayAsset("signature", s)


# 5x7 bitmap glyphs, one string of 7 rows per character, '#' = ink.
_FONT_ROWS = {
    "A": [" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"],
    "B": ["#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "],
    "C": [" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "],
    "D": ["#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "],
    "E": ["#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"],
    "F": ["#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "],
    "G": [" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ####"],
    "H": ["#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"],
    "I": [" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "],
    "J": ["  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "],
    "K": ["#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"],
    "L": ["#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"],
    "M": ["#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"],
    "N": ["#   #", "#   #", "##  #", "# # #", "#  ##", "#   #", "#   #"],
    "O": [" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "],
    "P": ["#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "],
    "Q": [" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"],
    "R": ["#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"],
    "S": [" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "],
    "T": ["#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "],
    "U": ["#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "],
    "V": ["#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "],
    "W": ["#   #", "#   #", "#   #", "# # #", "# # #", "# # #", " # # "],
    "X": ["#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"],
    "Y": ["#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "],
    "Z": ["#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"],
    "0": [" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "],
    "1": ["  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "],
    "2": [" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"],
    "3": ["#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "],
    "4": ["   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "],
    "5": ["#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "],
    "6": ["  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "],
    "7": ["#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "],
    "8": [" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "],
    "9": [" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "],
    " ": ["     "] * 7,
}
GLYPH_W, GLYPH_H = 5, 7
FONT = {ch: np.array([[c == "#" for c in row] for row in rows], dtype=bool) for ch, rows in _FONT_ROWS.items()}


def render_text_mask(text: str, scale: int = 1) -> np.ndarray:
    """Boolean ink mask of ``text`` in the embedded 5x7 font, one-cell gaps."""
    if not text:
        raise AssetError("text must be nonempty")
    if scale < 1:
        raise AssetError("scale must be >= 1")
    bad = sorted({ch for ch in text if ch not in FONT})
    if bad:
        raise AssetError(f"unsupported characters: {''.join(bad)!r}")
    cols = []
    for i, ch in enumerate(text):
        if i:
            cols.append(np.zeros((GLYPH_H, 1), dtype=bool))
        cols.append(FONT[ch])
    mask = np.hstack(cols)
    return np.kron(mask, np.ones((scale, scale), dtype=bool))


def gen_watermark_word(text: str, scale: int = 1) -> OverlayAsset:
    mask = render_text_mask(text, scale)
    s = _sprite(*mask.shape, rgb=(WATERMARK_GRAY,) * 3, alpha=0.0)
    s[:, :, 3] = mask
    return OverlayAsset("watermark_word", s)


def gen_photo_block(seed: int, width: int, height: int) -> OverlayAsset:
    """Passport-photo stand-in: vertical gradient, light ellipse, dark border."""
    if width < 16 or height < 16:
        raise AssetError("photo block needs width, height >= 16")
    rng = stream(seed, _CATEGORY_KEYS["photo"])
    top = rng.uniform(0.55, 0.85, 3)
    bottom = top - rng.uniform(0.15, 0.35)
    t = np.linspace(0.0, 1.0, height)[:, None]
    rgb = np.broadcast_to(((1 - t) * top + t * bottom)[:, None, :], (height, width, 3)).copy()

    head = np.clip(top + rng.uniform(0.1, 0.2), 0.0, 1.0)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    ax, ay = width * 0.22, height * 0.28
    inside = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0
    rgb[inside] = head

    border = max(1, min(width, height) // 24)
    edge = np.zeros((height, width), dtype=bool)
    edge[:border] = edge[-border:] = True
    edge[:, :border] = edge[:, -border:] = True
    rgb[edge] = rng.uniform(0.0, 0.15)
    s = _sprite(height, width, alpha=1.0)
    s[:, :, :3] = np.clip(rgb, 0.0, 1.0)
    return OverlayAsset("photo", s)


def procedural_library(seed: int, size: int = 48, per_category: int = 3, categories=CATEGORIES) -> AssetLibrary:
    """Library of generated assets whose largest side is about ``size`` px."""
    size = max(int(size), 32)
    assets = []
    for cat in categories:
        for k in range(per_category):
            rng = stream(seed, _CATEGORY_KEYS[cat], k)
            sub = int(rng.integers(2**63))
            if cat == "stamp":
                a = gen_stamp(sub, max(16, size // 2 - int(rng.integers(0, size // 8 + 1))))
            elif cat == "signature":
                a = gen_signature(sub, size, max(16, size // 2))
            elif cat == "barcode":
                a = gen_barcode(sub, size, max(8, size // 3))
            elif cat == "qr":
                mods = int(rng.integers(9, 15))
                a = gen_qr_like(sub, mods, max(1, size // (mods * 2)))
            elif cat == "photo":
                a = gen_photo_block(sub, max(16, (size * 3) // 4), size)
            elif cat == "watermark_word":
                word = WATERMARK_WORDS[int(rng.integers(len(WATERMARK_WORDS)))]
                a = gen_watermark_word(word, max(1, size // (6 * len(word))))
            else:
                raise AssetError(f"unknown category {cat!r}")
            assets.append(a)
    return AssetLibrary(assets)


def gen_text_page(seed: int, height: int, width: int, scale: int = 1) -> np.ndarray:
    """Text-only page: dark glyph lines on white. Stand-in for real page sources."""
    rng = stream(seed, 1000)
    page = np.ones((height, width, 3), dtype=DTYPE)
    ink = float(rng.uniform(0.0, 0.2))
    alphabet = [c for c in FONT if c != " "]
    line_h = (GLYPH_H + 3) * scale
    margin = 2 * scale
    y = margin
    while y + GLYPH_H * scale <= height - margin:
        n_chars = max(1, (width - 2 * margin) // ((GLYPH_W + 1) * scale))
        chars = []
        for _ in range(n_chars):
            chars.append(" " if rng.random() < 0.18 else alphabet[int(rng.integers(len(alphabet)))])
        mask = render_text_mask("".join(chars), scale)
        w = min(mask.shape[1], width - 2 * margin)
        page[y : y + mask.shape[0], margin : margin + w][mask[:, :w]] = ink
        y += line_h
    return page

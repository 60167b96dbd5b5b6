"""Sample synthesis: overlay placement onto a text page and onto white.

The same sprite stream is composited twice, once over the page (the
composite) and once over a white canvas (the Layer 1 ground truth), while
the accumulated coverage ``A`` is tracked. That makes recombination exact:

    composite = layer1 + (1 - A) * (layer0 - 1)
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import degrade as dg
from .assets import CATEGORIES, AssetLibrary, stream
from .imagecore import DTYPE, alpha_composite, check_gray, check_rgb, rotate_sprite, sprite_window


class ConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    count_range: tuple[int, int] = (1, 6)
    angle_range: tuple[float, float] = (-45.0, 45.0)
    alpha_range: tuple[float, float] = (0.5, 1.0)
    category_weights: dict[str, float] = field(default_factory=lambda: {c: 1.0 for c in CATEGORIES})
    shadow: bool = True
    color_shift: bool = True
    output_size: tuple[int, int] = (128, 128)
    asset_size: int | None = None

    def __post_init__(self):
        self.count_range = tuple(int(v) for v in self.count_range)
        self.angle_range = tuple(float(v) for v in self.angle_range)
        self.alpha_range = tuple(float(v) for v in self.alpha_range)
        self.output_size = tuple(int(v) for v in self.output_size)
        lo, hi = self.count_range
        if not 0 <= lo <= hi <= 12:
            raise ConfigError(f"count_range must lie within [0, 12], got {self.count_range}")
        a0, a1 = self.angle_range
        if not -45.0 <= a0 <= a1 <= 45.0:
            raise ConfigError(f"angle_range must lie within [-45, 45], got {self.angle_range}")
        b0, b1 = self.alpha_range
        if not 0.5 <= b0 <= b1 <= 1.0:
            raise ConfigError(f"alpha_range must lie within [0.5, 1], got {self.alpha_range}")
        unknown = set(self.category_weights) - set(CATEGORIES)
        if unknown:
            raise ConfigError(f"unknown categories: {sorted(unknown)}")
        if any(w < 0 for w in self.category_weights.values()) or not any(
            w > 0 for w in self.category_weights.values()
        ):
            raise ConfigError("category weights must be >= 0 with at least one positive")
        if len(self.output_size) != 2 or min(self.output_size) < 8:
            raise ConfigError("output_size must be (H, W) with both >= 8")

    @property
    def categories(self) -> list[str]:
        return [c for c in CATEGORIES if self.category_weights.get(c, 0) > 0]

    @property
    def sprite_size(self) -> int:
        return self.asset_size or max(32, int(0.4 * min(self.output_size)))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "SynthConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_json(d)


@dataclass
class PlacementSpec:
    """``x, y`` anchor the unrotated sprite; rotation keeps its center fixed."""

    asset_index: int
    theta: float
    x: int
    y: int
    global_alpha: float
    order: int

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class LayerSample:
    input: np.ndarray
    layer0: np.ndarray
    layer1: np.ndarray
    alpha_map: np.ndarray
    placements: list[PlacementSpec]
    seed: int
    degrade_spec: dg.DegradeSpec
    composite: np.ndarray | None = None  # pre-degradation composite, kept for checks


def draw_placements(shape, lib: AssetLibrary, seed: int, cfg: SynthConfig) -> list[PlacementSpec]:
    cats = cfg.categories
    lib.require(cats)
    rng = stream(seed, 3000)
    H, W = shape[:2]
    k = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))
    weights = np.array([cfg.category_weights[c] for c in cats], dtype=np.float64)
    weights /= weights.sum()
    out = []
    for order in range(k):
        cat = cats[int(rng.choice(len(cats), p=weights))]
        members = lib.index[cat]
        idx = members[int(rng.integers(len(members)))]
        theta = float(rng.uniform(*cfg.angle_range))
        h, w = lib.assets[idx].sprite.shape[:2]
        # anchor may hang off the page by up to a quarter of the sprite
        x = int(rng.integers(-(w // 4), max(-(w // 4) + 1, W - (3 * w) // 4)))
        y = int(rng.integers(-(h // 4), max(-(h // 4) + 1, H - (3 * h) // 4)))
        alpha = float(rng.uniform(*cfg.alpha_range))
        out.append(PlacementSpec(idx, theta, x, y, alpha, order))
    return out


def composite_placements(layer0: np.ndarray, lib: AssetLibrary, placements: list[PlacementSpec]):
    """Apply placements in order to the page and to a white canvas."""
    check_rgb(layer0, "layer0")
    composite = layer0.astype(DTYPE, copy=True)
    layer1 = np.ones_like(composite)
    alpha_map = np.zeros(composite.shape[:2], dtype=DTYPE)
    for p in sorted(placements, key=lambda p: p.order):
        sprite = rotate_sprite(lib.assets[p.asset_index].sprite, p.theta)
        h, w = sprite.shape[:2]
        # keep the sprite center where the unrotated sprite would have put it
        src = lib.assets[p.asset_index].sprite
        x = p.x + (src.shape[1] - w) // 2
        y = p.y + (src.shape[0] - h) // 2
        composite = alpha_composite(composite, sprite, x, y, p.global_alpha)
        layer1 = alpha_composite(layer1, sprite, x, y, p.global_alpha)
        win = sprite_window(alpha_map.shape, sprite.shape, x, y)
        if win is not None:
            d, s = win
            a = sprite[s][:, :, 3] * DTYPE(p.global_alpha)
            alpha_map[d] = a + (1 - a) * alpha_map[d]
    return composite, layer1, np.clip(alpha_map, 0.0, 1.0)


def place_overlays(layer0: np.ndarray, lib: AssetLibrary, seed: int, cfg: SynthConfig):
    """Returns ``(composite, layer1, alpha_map, placements)``."""
    placements = draw_placements(layer0.shape, lib, seed, cfg)
    composite, layer1, alpha_map = composite_placements(layer0, lib, placements)
    return composite, layer1, alpha_map, placements


def recombine(layer0: np.ndarray, layer1: np.ndarray, alpha_map: np.ndarray) -> np.ndarray:
    check_rgb(layer0, "layer0")
    check_rgb(layer1, "layer1")
    check_gray(alpha_map, "alpha_map")
    if layer0.shape != layer1.shape or layer0.shape[:2] != alpha_map.shape:
        raise ValueError(
            f"dimension mismatch: {layer0.shape}, {layer1.shape}, {alpha_map.shape}"
        )
    out = layer1 + (1 - alpha_map)[:, :, None] * (layer0 - 1)
    return np.clip(out, 0.0, 1.0)


def fit_page(page: np.ndarray, size: tuple[int, int], seed: int) -> np.ndarray:
    """Deterministic crop of a source page to ``size``; pads with white if smaller."""
    check_rgb(page, "page")
    H, W = size
    ph, pw = page.shape[:2]
    if ph < H or pw < W:
        padded = np.ones((max(ph, H), max(pw, W), 3), dtype=DTYPE)
        padded[:ph, :pw] = page
        page, ph, pw = padded, max(ph, H), max(pw, W)
    rng = stream(seed, 4000)
    y = int(rng.integers(0, ph - H + 1))
    x = int(rng.integers(0, pw - W + 1))
    return np.ascontiguousarray(page[y : y + H, x : x + W]).astype(DTYPE)


def synth_sample(layer0_source: np.ndarray, lib: AssetLibrary, seed: int, cfg: SynthConfig) -> LayerSample:
    """Overlays then degradation; ground-truth layers stay clean."""
    layer0 = fit_page(layer0_source, cfg.output_size, seed)
    composite, layer1, alpha_map, placements = place_overlays(layer0, lib, seed, cfg)
    degraded, spec = dg.degrade(composite, seed, shadow=cfg.shadow, color_shift=cfg.color_shift)
    return LayerSample(
        input=degraded,
        layer0=layer0,
        layer1=layer1,
        alpha_map=alpha_map,
        placements=placements,
        seed=int(seed),
        degrade_spec=spec,
        composite=composite,
    )

"""Capture-simulation degradations: smooth random shadows and color shifts."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .imagecore import check_rgb

GAIN_FLOOR = 0.4
GAIN_RANGE = (0.85, 1.15)
OFFSET_RANGE = (-0.05, 0.05)
GRID_SIZES = (2, 3, 4)


@dataclass
class DegradeSpec:
    shadow_grid: list[list[float]] = field(default_factory=lambda: [[1.0, 1.0], [1.0, 1.0]])
    g_min: float = GAIN_FLOOR
    channel_gains: list[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])
    channel_offsets: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    seed: int = 0
    shadow: bool = True
    color_shift: bool = True

    def __post_init__(self):
        grid = np.asarray(self.shadow_grid, dtype=np.float64)
        if grid.ndim != 2 or grid.shape[0] != grid.shape[1] or grid.shape[0] not in GRID_SIZES:
            raise ValueError(f"shadow_grid must be k x k with k in {GRID_SIZES}")
        if self.g_min < GAIN_FLOOR:
            raise ValueError(f"g_min must be >= {GAIN_FLOOR}")
        if np.any(grid < self.g_min - 1e-12) or np.any(grid > 1.0):
            raise ValueError("shadow_grid values must lie in [g_min, 1]")
        if len(self.channel_gains) != 3 or len(self.channel_offsets) != 3:
            raise ValueError("need 3 channel gains and 3 channel offsets")

    @classmethod
    def identity(cls, seed: int = 0) -> "DegradeSpec":
        return cls(seed=seed, shadow=False, color_shift=False)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "DegradeSpec":
        return cls(**d)


def sample_spec(seed: int, shadow: bool = True, color_shift: bool = True) -> DegradeSpec:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 2000])))
    k = int(rng.choice(GRID_SIZES))
    g_min = float(rng.uniform(GAIN_FLOOR, 0.8))
    grid = rng.uniform(g_min, 1.0, (k, k))
    gains = rng.uniform(*GAIN_RANGE, 3)
    offsets = rng.uniform(*OFFSET_RANGE, 3)
    return DegradeSpec(
        shadow_grid=grid.tolist(),
        g_min=g_min,
        channel_gains=gains.tolist(),
        channel_offsets=offsets.tolist(),
        seed=int(seed),
        shadow=shadow,
        color_shift=color_shift,
    )


def gain_field(grid, height: int, width: int) -> np.ndarray:
    """Corner-aligned bilinear upsampling of a k x k grid to H x W."""
    g = np.asarray(grid, dtype=np.float64)
    k = g.shape[0]
    knots = np.linspace(0.0, 1.0, k)
    ys = np.linspace(0.0, 1.0, height) if height > 1 else np.zeros(1)
    xs = np.linspace(0.0, 1.0, width) if width > 1 else np.zeros(1)
    eye = np.eye(k)
    wy = np.stack([np.interp(ys, knots, e) for e in eye], axis=1)  # (H, k)
    wx = np.stack([np.interp(xs, knots, e) for e in eye], axis=1)  # (W, k)
    return wy @ g @ wx.T


def apply_shadow(img: np.ndarray, spec: DegradeSpec) -> np.ndarray:
    check_rgb(img)
    g = gain_field(spec.shadow_grid, *img.shape[:2]).astype(img.dtype)
    return np.clip(img * g[:, :, None], 0.0, 1.0)


def apply_color_shift(img: np.ndarray, spec: DegradeSpec) -> np.ndarray:
    check_rgb(img)
    gains = np.asarray(spec.channel_gains, dtype=img.dtype)
    offsets = np.asarray(spec.channel_offsets, dtype=img.dtype)
    return np.clip(gains * img + offsets, 0.0, 1.0)


def apply(img: np.ndarray, spec: DegradeSpec) -> np.ndarray:
    """Replay a recorded degradation: shadow, then color shift."""
    out = img.copy()
    if spec.shadow:
        out = apply_shadow(out, spec)
    if spec.color_shift:
        out = apply_color_shift(out, spec)
    return out


def degrade(img: np.ndarray, seed: int, shadow: bool = True, color_shift: bool = True):
    spec = sample_spec(seed, shadow=shadow, color_shift=color_shift)
    return apply(img, spec), spec

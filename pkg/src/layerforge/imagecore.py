"""Pixel buffers, PNG IO, luminance, sprite rotation and alpha compositing.

Images are plain numpy arrays:

* RGB image: ``(H, W, 3)`` float32 in [0, 1]
* gray image: ``(H, W)`` float32 in [0, 1]
* sprite: ``(H, W, 4)`` float32 in [0, 1], straight (non-premultiplied) alpha

Functions never mutate their inputs.
"""
from __future__ import annotations

import os

import cv2
import numpy as np

DTYPE = np.float32
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageError(ValueError):
    """Raised for invalid image buffers or undecodable files."""


def check_rgb(img: np.ndarray, name: str = "image") -> np.ndarray:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageError(f"{name}: expected (H, W, 3) array, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageError(f"{name}: zero-dimension image")
    return img


def check_gray(img: np.ndarray, name: str = "image") -> np.ndarray:
    if img.ndim != 2:
        raise ImageError(f"{name}: expected (H, W) array, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageError(f"{name}: zero-dimension image")
    return img


def check_sprite(s: np.ndarray, name: str = "sprite") -> np.ndarray:
    if s.ndim != 3 or s.shape[2] != 4:
        raise ImageError(f"{name}: expected (H, W, 4) array, got shape {s.shape}")
    if s.shape[0] < 1 or s.shape[1] < 1:
        raise ImageError(f"{name}: empty sprite")
    return s


def as_image(data, channels: int | None = 3) -> np.ndarray:
    """Convert array-like data to a clamped float32 image buffer."""
    arr = np.asarray(data, dtype=DTYPE)
    if not np.all(np.isfinite(arr)):
        raise ImageError("non-finite pixel values")
    arr = np.clip(arr, 0.0, 1.0)
    if channels == 3:
        check_rgb(arr)
    elif channels == 4:
        check_sprite(arr)
    elif channels == 1:
        check_gray(arr)
    return arr


def _read_raw(path: str | os.PathLike, flags: int) -> np.ndarray:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head != PNG_SIGNATURE:
        raise ImageError(f"{path}: not a PNG file")
    raw = cv2.imread(path, flags)
    if raw is None:
        raise ImageError(f"{path}: undecodable PNG")
    if raw.dtype not in (np.uint8, np.uint16):
        raise ImageError(f"{path}: unsupported sample type {raw.dtype}")
    if raw.shape[0] == 0 or raw.shape[1] == 0:
        raise ImageError(f"{path}: zero-dimension image")
    return raw


def _normalize(raw: np.ndarray) -> np.ndarray:
    maxval = 65535.0 if raw.dtype == np.uint16 else 255.0
    return (raw.astype(np.float64) / maxval).astype(DTYPE)


def _rgba_from_raw(raw: np.ndarray) -> np.ndarray:
    """cv2 channel order (gray / BGR / BGRA) -> RGBA floats."""
    v = _normalize(raw)
    if v.ndim == 2:
        v = v[:, :, None]
    c = v.shape[2]
    if c == 1:
        rgb, a = np.repeat(v, 3, axis=2), np.ones(v.shape[:2], DTYPE)
    elif c == 2:
        rgb, a = np.repeat(v[:, :, :1], 3, axis=2), v[:, :, 1]
    elif c == 3:
        rgb, a = v[:, :, ::-1], np.ones(v.shape[:2], DTYPE)
    elif c == 4:
        rgb, a = v[:, :, 2::-1], v[:, :, 3]
    else:
        raise ImageError(f"unsupported channel count {c}")
    return np.dstack([rgb, a]).astype(DTYPE)


def load_png(path: str | os.PathLike) -> np.ndarray:
    """Load an 8/16-bit gray, RGB or RGBA PNG as an RGB image.

    Alpha is flattened over white.
    """
    rgba = _rgba_from_raw(_read_raw(path, cv2.IMREAD_UNCHANGED))
    a = rgba[:, :, 3:]
    if np.all(a == 1.0):
        return np.ascontiguousarray(rgba[:, :, :3])
    return as_image(rgba[:, :, :3] * a + (1.0 - a))


def load_sprite_png(path: str | os.PathLike) -> np.ndarray:
    """Load a PNG as an RGBA sprite (opaque if the file has no alpha)."""
    return _rgba_from_raw(_read_raw(path, cv2.IMREAD_UNCHANGED))


def load_gray_png(path: str | os.PathLike) -> np.ndarray:
    raw = _read_raw(path, cv2.IMREAD_UNCHANGED)
    if raw.ndim != 2:
        raise ImageError(f"{path}: expected a single-channel PNG")
    return _normalize(raw)


def quantize(img: np.ndarray, bits: int = 8) -> np.ndarray:
    """Round-half-up quantization, returned as the matching unsigned ints."""
    maxval = (1 << bits) - 1
    q = np.floor(np.clip(img.astype(np.float64), 0.0, 1.0) * maxval + 0.5)
    return q.astype(np.uint16 if bits > 8 else np.uint8)


def _write(path: str | os.PathLike, arr: np.ndarray) -> None:
    path = os.fspath(path)
    ok = cv2.imwrite(path, arr, [cv2.IMWRITE_PNG_COMPRESSION, 6])
    if not ok:
        raise OSError(f"could not write {path}")


def save_png(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write an RGB image as an 8-bit RGB PNG."""
    check_rgb(img)
    _write(path, quantize(img, 8)[:, :, ::-1])


def save_gray_png(img: np.ndarray, path: str | os.PathLike, bits: int = 16) -> None:
    check_gray(img)
    _write(path, quantize(img, bits))


def save_sprite_png(s: np.ndarray, path: str | os.PathLike) -> None:
    check_sprite(s)
    q = quantize(s, 8)
    _write(path, q[:, :, [2, 1, 0, 3]])


def to_luminance(img: np.ndarray) -> np.ndarray:
    """Rec. 601 luma plane."""
    check_rgb(img)
    r, g, b = LUMA_WEIGHTS
    y = r * img[:, :, 0] + g * img[:, :, 1] + b * img[:, :, 2]
    # Gray pixels must map to themselves exactly; the weighted sum can be off by an ulp.
    gray = (img[:, :, 0] == img[:, :, 1]) & (img[:, :, 1] == img[:, :, 2])
    y = np.where(gray, img[:, :, 0], y)
    return np.clip(y, 0.0, 1.0).astype(img.dtype if img.dtype.kind == "f" else DTYPE)


def _rotated_extent(h: int, w: int, theta: float) -> tuple[int, int]:
    rad = np.deg2rad(theta)
    c, s = abs(np.cos(rad)), abs(np.sin(rad))
    bw = w * c + h * s
    bh = w * s + h * c
    return max(1, int(np.ceil(bh - 1e-6))), max(1, int(np.ceil(bw - 1e-6)))


def rotate_sprite(s: np.ndarray, theta: float) -> np.ndarray:
    """Rotate a sprite counterclockwise by ``theta`` degrees about its center.

    The output canvas is the axis-aligned bounding box of the rotated sprite.
    Multiples of 90 degrees are exact pixel permutations; other angles use
    bilinear sampling of premultiplied color, with transparent samples
    outside the source.
    """
    check_sprite(s)
    if not -180.0 <= theta <= 180.0:
        raise ValueError(f"theta must lie in [-180, 180], got {theta}")
    quarter = theta / 90.0
    if quarter == round(quarter):
        return np.ascontiguousarray(np.rot90(s, k=int(round(quarter)) % 4, axes=(0, 1)))
    return _rotate_bilinear(s, theta)


def _rotate_bilinear(s: np.ndarray, theta: float) -> np.ndarray:
    h, w = s.shape[:2]
    oh, ow = _rotated_extent(h, w, theta)
    rad = np.deg2rad(theta)
    cos, sin = np.cos(rad), np.sin(rad)

    yy, xx = np.mgrid[0:oh, 0:ow].astype(np.float64)
    px = xx + 0.5 - ow / 2.0
    py = yy + 0.5 - oh / 2.0
    # inverse of the (y-down) counterclockwise rotation
    sx = px * cos - py * sin + w / 2.0 - 0.5
    sy = px * sin + py * cos + h / 2.0 - 0.5

    src = s.astype(np.float64)
    prem = np.dstack([src[:, :, :3] * src[:, :, 3:], src[:, :, 3]])
    padded = np.zeros((h + 2, w + 2, 4))
    padded[1:-1, 1:-1] = prem

    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    # shift by one for the transparent border, then clip far-away samples onto it
    xi = np.clip(x0.astype(np.int64) + 1, 0, w + 1)
    yi = np.clip(y0.astype(np.int64) + 1, 0, h + 1)
    xj = np.clip(xi + 1, 0, w + 1)
    yj = np.clip(yi + 1, 0, h + 1)
    outside = (sx < -1) | (sx > w) | (sy < -1) | (sy > h)

    out = (
        padded[yi, xi] * (1 - fx) * (1 - fy)
        + padded[yi, xj] * fx * (1 - fy)
        + padded[yj, xi] * (1 - fx) * fy
        + padded[yj, xj] * fx * fy
    )
    out[outside] = 0.0
    a = out[:, :, 3:]
    rgb = np.where(a > 1e-12, out[:, :, :3] / np.maximum(a, 1e-12), 0.0)
    return np.clip(np.dstack([rgb, a]), 0.0, 1.0).astype(DTYPE)


def sprite_window(dst_shape, sprite_shape, x: int, y: int):
    """Overlap of a sprite anchored at (x, y) with a canvas.

    Returns ``(dst_slices, src_slices)`` or None when nothing overlaps.
    """
    H, W = dst_shape[:2]
    h, w = sprite_shape[:2]
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, W), min(y + h, H)
    if x0 >= x1 or y0 >= y1:
        return None
    return (
        (slice(y0, y1), slice(x0, x1)),
        (slice(y0 - y, y1 - y), slice(x0 - x, x1 - x)),
    )


def alpha_composite(
    dst: np.ndarray, s: np.ndarray, x: int, y: int, global_alpha: float = 1.0
) -> np.ndarray:
    """Straight-alpha "over" of a sprite onto an RGB canvas.

    ``x, y`` is the top-left anchor; parts of the sprite outside the canvas
    are clipped.
    """
    check_rgb(dst, "dst")
    check_sprite(s)
    if not 0.0 <= global_alpha <= 1.0:
        raise ValueError(f"global_alpha must lie in [0, 1], got {global_alpha}")
    out = dst.copy()
    win = sprite_window(dst.shape, s.shape, int(x), int(y))
    if win is None or global_alpha == 0.0:
        return out
    d, sr = win
    a = s[sr][:, :, 3:] * DTYPE(global_alpha)
    region = out[d]
    out[d] = np.clip((1 - a) * region + a * s[sr][:, :, :3], 0.0, 1.0)
    return out

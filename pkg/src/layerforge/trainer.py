"""Adam training loop with independent best-L0 / best-L1 checkpoint tracking."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nnmodel as nn
from .assets import stream
from .compositor import LayerSample
from .metrics import MetricsRecord, evaluate_pair

log = logging.getLogger(__name__)


class GeometryError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 1000
    batch: int = 4
    crop: int = 64
    seed: int = 0
    val_every: int = 100
    base_channels: int = 16

    def __post_init__(self):
        if self.crop % 8 or self.crop < 8:
            raise ValueError("crop must be a positive multiple of 8")
        # steps == 0 is a dry run: validate the initial model only
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.val_every < 1:
            raise ValueError("val_every must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, model: nn.ModelState) -> "AdamState":
        return cls(
            {k: np.zeros_like(p) for k, p in model.params.items()},
            {k: np.zeros_like(p) for k, p in model.params.items()},
        )


def adam_step(model: nn.ModelState, grads: dict, state: AdamState, cfg: TrainConfig) -> nn.ModelState:
    """One bias-corrected Adam update, applied in place."""
    if set(grads) != set(model.params):
        raise nn.ShapeError("gradient names do not match model parameters")
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for k, p in model.params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise nn.ShapeError(f"shape mismatch for {k}: {g.shape} vs {p.shape}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)).astype(p.dtype)
    return model


def to_tensor(img: np.ndarray) -> np.ndarray:
    """(H, W, 3) image -> (1, 3, H, W) float32 tensor."""
    return np.ascontiguousarray(img.transpose(2, 0, 1)[None], dtype=np.float32)


def to_image(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(t[0].transpose(1, 2, 0))


def center_crop8(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    h8, w8 = h - h % 8, w - w % 8
    if h8 == 0 or w8 == 0:
        raise GeometryError(f"image {h}x{w} is smaller than 8 px")
    y, x = (h - h8) // 2, (w - w8) // 2
    return img[y : y + h8, x : x + w8]


def _stack(samples, attr):
    return np.stack([getattr(s, attr).transpose(2, 0, 1) for s in samples]).astype(np.float32)


def validate(model: nn.ModelState, val: list[LayerSample]):
    """Returns ``(val_l0, val_l1, records)``; ``records`` holds one metric list per sample."""
    if not val:
        raise ValueError("empty validation set")
    l0s, l1s, records = [], [], []
    for s in val:
        x = to_tensor(center_crop8(s.input))
        g0 = to_tensor(center_crop8(s.layer0))
        g1 = to_tensor(center_crop8(s.layer1))
        p0, p1 = nn.split_layers(nn.forward(model, x))
        l0s.append(nn.l1_loss(p0, g0)[0])
        l1s.append(nn.l1_loss(p1, g1)[0])
        pred = (np.clip(to_image(p0), 0, 1), np.clip(to_image(p1), 0, 1))
        records.append(evaluate_pair(pred, (to_image(g0), to_image(g1))))
    return float(np.mean(l0s)), float(np.mean(l1s)), records


def infer(model: nn.ModelState, img: np.ndarray):
    """Separate an image of any size into clamped ``(layer0, layer1)``."""
    h, w = img.shape[:2]
    ph, pw = (-h) % 8, (-w) % 8
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect") if ph or pw else img
    p0, p1 = nn.split_layers(nn.forward(model, to_tensor(padded)))
    l0 = np.clip(to_image(p0)[:h, :w], 0.0, 1.0)
    l1 = np.clip(to_image(p1)[:h, :w], 0.0, 1.0)
    return l0, l1


@dataclass
class CheckpointSet:
    best_l0: nn.ModelState
    best_l0_val: float
    best_l1: nn.ModelState
    best_l1_val: float
    last: nn.ModelState
    best_l0_step: int = 0
    best_l1_step: int = 0
    history: list[dict] = field(default_factory=list)
    val_log: list[dict] = field(default_factory=list)


def _crop_batch(rng, inputs, gt0, gt1, batch: int, crop: int):
    idx = rng.integers(len(inputs), size=batch)
    xs, a, b = [], [], []
    for i in idx:
        h, w = inputs[i].shape[1:]
        y = int(rng.integers(0, h - crop + 1))
        x = int(rng.integers(0, w - crop + 1))
        sl = (slice(None), slice(y, y + crop), slice(x, x + crop))
        xs.append(inputs[i][sl])
        a.append(gt0[i][sl])
        b.append(gt1[i][sl])
    return np.stack(xs), np.stack(a), np.stack(b)


def train(
    dataset: list[LayerSample],
    val: list[LayerSample],
    cfg: TrainConfig,
    model: nn.ModelState | None = None,
) -> CheckpointSet:
    if not dataset:
        raise ValueError("empty training set")
    if not val:
        raise ValueError("empty validation set")
    smallest = min(min(s.input.shape[:2]) for s in dataset)
    if cfg.crop > smallest:
        raise GeometryError(f"crop {cfg.crop} larger than smallest training image ({smallest} px)")

    if model is None:
        model = nn.init_model(nn.ModelConfig(cfg.base_channels), seed=cfg.seed)
    model = model.copy()
    inputs = [s.input.transpose(2, 0, 1).astype(np.float32) for s in dataset]
    gt0 = [s.layer0.transpose(2, 0, 1).astype(np.float32) for s in dataset]
    gt1 = [s.layer1.transpose(2, 0, 1).astype(np.float32) for s in dataset]
    rng = stream(cfg.seed, 6000)
    adam = AdamState.zeros_like(model)

    v0, v1, _ = validate(model, val)
    ck = CheckpointSet(model.copy(), v0, model.copy(), v1, model.copy())
    ck.val_log.append({"step": 0, "val_l0": v0, "val_l1": v1})

    for step in range(1, cfg.steps + 1):
        x, y0, y1 = _crop_batch(rng, inputs, gt0, gt1, cfg.batch, cfg.crop)
        cache = {}
        out = nn.forward(model, x, cache)
        losses, grad = nn.total_loss(out, y0, y1)
        grads = nn.backward(model, cache, grad)
        adam_step(model, grads, adam, cfg)
        entry = {"step": step, **losses.to_json()}
        if step % cfg.val_every == 0 or step == cfg.steps:
            v0, v1, _ = validate(model, val)
            entry.update(val_l0=v0, val_l1=v1)
            ck.val_log.append({"step": step, "val_l0": v0, "val_l1": v1})
            if v0 < ck.best_l0_val:
                ck.best_l0, ck.best_l0_val, ck.best_l0_step = model.copy(), v0, step
            if v1 < ck.best_l1_val:
                ck.best_l1, ck.best_l1_val, ck.best_l1_step = model.copy(), v1, step
            log.info("step %d loss %.5f val_l0 %.5f val_l1 %.5f", step, losses.total, v0, v1)
        ck.history.append(entry)
    ck.last = model.copy()
    return ck


def mean_records(records: list[list[MetricsRecord]], layer: str) -> dict:
    rows = [r for recs in records for r in recs if r.layer == layer]
    return {k: float(np.mean([getattr(r, k) for r in rows])) for k in ("psnr_color", "psnr_illum", "ssim")}


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)

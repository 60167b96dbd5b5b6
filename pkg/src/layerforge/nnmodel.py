"""Small U-shaped encoder-decoder with a 6-channel two-layer head.

Tensors are ``(N, C, H, W)`` numpy arrays. Every layer has a hand-written
backward pass; ``forward`` records what ``backward`` needs in a cache.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LEAK = 0.1
OUT_CHANNELS = 6
DOWNSAMPLES = 3
CKPT_MAGIC = b"LYRD"
CKPT_VERSION = 1


class ShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# -- layers -----------------------------------------------------------------


@dataclass
class ConvSpec:
    weight: np.ndarray  # (out, in, 3, 3)
    bias: np.ndarray  # (out,)
    stride: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2:] != (3, 3):
            raise ShapeError(f"conv weight must be (out, in, 3, 3), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} outputs")
        if self.stride not in (1, 2):
            raise ShapeError("stride must be 1 or 2")

    @property
    def in_ch(self) -> int:
        return self.weight.shape[1]

    @property
    def out_ch(self) -> int:
        return self.weight.shape[0]


def _im2col(x: np.ndarray, stride: int) -> np.ndarray:
    """``(C, N, H, W)`` -> ``(C*9, N*Ho*Wo)`` patch matrix, zero padding 1."""
    c, n, h, w = x.shape
    ho, wo = h // stride, w // stride
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((c, 3, 3, n, ho, wo), dtype=x.dtype)
    for ki in range(3):
        for kj in range(3):
            cols[:, ki, kj] = xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
    return cols.reshape(c * 9, n * ho * wo)


def _col2im(gcols: np.ndarray, shape, stride: int) -> np.ndarray:
    c, n, h, w = shape
    ho, wo = h // stride, w // stride
    g = gcols.reshape(c, 3, 3, n, ho, wo)
    gxp = np.zeros((c, n, h + 2, w + 2), dtype=gcols.dtype)
    for ki in range(3):
        for kj in range(3):
            gxp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += g[:, ki, kj]
    return gxp[:, :, 1:-1, 1:-1]


def _check_conv_input(x: np.ndarray, spec: ConvSpec, channel_axis: int = 1) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected a 4-d tensor, got shape {x.shape}")
    if x.shape[channel_axis] != spec.in_ch:
        raise ShapeError(f"channel mismatch: input has {x.shape[channel_axis]}, conv expects {spec.in_ch}")
    if x.shape[2] % spec.stride or x.shape[3] % spec.stride:
        raise ShapeError(f"spatial dims {x.shape[2:]} not divisible by stride {spec.stride}")


def _conv_fwd(x: np.ndarray, spec: ConvSpec):
    """Channels-first ``(C, N, H, W)`` convolution; returns output and patch matrix."""
    _check_conv_input(x, spec, channel_axis=0)
    _, n, h, w = x.shape
    cols = _im2col(x, spec.stride)
    out = spec.weight.reshape(spec.out_ch, -1) @ cols
    out += spec.bias[:, None]
    return out.reshape(spec.out_ch, n, h // spec.stride, w // spec.stride), cols


def _conv_bwd(x_shape, spec: ConvSpec, grad_out: np.ndarray, cols: np.ndarray):
    go = grad_out.reshape(spec.out_ch, -1)
    grad_w = (go @ cols.T).reshape(spec.weight.shape)
    grad_b = go.sum(axis=1)
    grad_x = _col2im(spec.weight.reshape(spec.out_ch, -1).T @ go, x_shape, spec.stride)
    return grad_x, grad_w, grad_b


def conv2d_forward(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """3x3 convolution (cross-correlation) of an NCHW tensor, zero padding 1."""
    _check_conv_input(x, spec)
    out, _ = _conv_fwd(np.ascontiguousarray(x.transpose(1, 0, 2, 3)), spec)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def conv2d_backward(x: np.ndarray, spec: ConvSpec, grad_out: np.ndarray):
    """Returns ``(grad_x, grad_w, grad_b)`` for an NCHW forward call."""
    _check_conv_input(x, spec)
    n, _, h, w = x.shape
    expected = (n, spec.out_ch, h // spec.stride, w // spec.stride)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != {expected}")
    xc = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    cols = _im2col(xc, spec.stride)
    gc = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3))
    gx, gw, gb = _conv_bwd(xc.shape, spec, gc, cols)
    return np.ascontiguousarray(gx.transpose(1, 0, 2, 3)), gw, gb


def activation(x: np.ndarray) -> np.ndarray:
    """Leaky rectifier with slope 0.1 below zero."""
    return np.where(x >= 0, x, x * x.dtype.type(LEAK))


def activation_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, grad_out, grad_out * grad_out.dtype.type(LEAK))


def upsample2(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbor x2 on the last two axes."""
    a, b, h, w = x.shape
    out = np.empty((a, b, h, 2, w, 2), dtype=x.dtype)
    out[...] = x[:, :, :, None, :, None]
    return out.reshape(a, b, 2 * h, 2 * w)


def upsample2_backward(grad_out: np.ndarray) -> np.ndarray:
    a, b, h, w = grad_out.shape
    return grad_out.reshape(a, b, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


# -- model ------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 16
    downsamples: int = DOWNSAMPLES
    skip_connections: bool = True
    final_out_channels: int = OUT_CHANNELS

    def __post_init__(self):
        if self.downsamples != DOWNSAMPLES:
            raise ValueError("downsamples is fixed at 3")
        if self.final_out_channels != OUT_CHANNELS:
            raise ValueError("final_out_channels is fixed at 6")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")

    def layer_shapes(self) -> dict[str, tuple[int, int, int]]:
        """name -> (in_ch, out_ch, stride), in execution order."""
        b = self.base_channels
        return {
            "stem": (3, b, 1),
            "enc1": (b, 2 * b, 2),
            "enc2": (2 * b, 4 * b, 2),
            "enc3": (4 * b, 8 * b, 2),
            "dec3": (8 * b, 4 * b, 1),
            "dec2": (4 * b, 2 * b, 1),
            "dec1": (2 * b, b, 1),
            "head": (b, OUT_CHANNELS, 1),
        }

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for name, (cin, cout, _) in self.layer_shapes().items():
            shapes[f"{name}.weight"] = (cout, cin, 3, 3)
            shapes[f"{name}.bias"] = (cout,)
        return shapes


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def conv(self, name: str) -> ConvSpec:
        stride = self.config.layer_shapes()[name][2]
        return ConvSpec(self.params[f"{name}.weight"], self.params[f"{name}.bias"], stride)

    def copy(self) -> "ModelState":
        return ModelState(self.config, {k: v.copy() for k, v in self.params.items()})

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> "ModelState":
        return ModelState(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])

    def equals(self, other: "ModelState") -> bool:
        return self.config == other.config and all(
            np.array_equal(v, other.params[k]) for k, v in self.params.items()
        )


def init_model(config: ModelConfig | None = None, seed: int = 0, dtype=np.float32) -> ModelState:
    """Fan-in uniform init in +-sqrt(1 / (in_ch * 9)), zero biases."""
    config = config or ModelConfig()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 5000])))
    params = {}
    for name, (cin, cout, _) in config.layer_shapes().items():
        bound = np.sqrt(1.0 / (cin * 9))
        params[f"{name}.weight"] = rng.uniform(-bound, bound, (cout, cin, 3, 3)).astype(dtype)
        params[f"{name}.bias"] = np.zeros(cout, dtype=dtype)
    return ModelState(config, params)


def _check_input(model: ModelState, x: np.ndarray) -> None:
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"expected (N, 3, H, W) input, got shape {x.shape}")
    if x.shape[2] % 8 or x.shape[3] % 8:
        raise ShapeError(f"H and W must be divisible by 8, got {x.shape[2:]}")


_ENCODER = ("stem", "enc1", "enc2", "enc3")
_DECODER = (("dec3", "enc2"), ("dec2", "enc1"), ("dec1", "stem"))


def forward(model: ModelState, x: np.ndarray, cache: dict | None = None) -> np.ndarray:
    """``(N, 3, H, W) -> (N, 6, H, W)``; pass a dict as ``cache`` to enable backward.

    After the call ``cache["bottleneck"]`` holds the ``(N, 8b, H/8, W/8)`` features.
    """
    _check_input(model, x)
    c = cache if cache is not None else {}
    # internal layout is channels-first (C, N, H, W)
    h = np.ascontiguousarray(x.transpose(1, 0, 2, 3), dtype=model.dtype)
    feats = {}
    for name in _ENCODER:
        spec = model.conv(name)
        c[f"{name}.shape"] = h.shape
        z, c[f"{name}.cols"] = _conv_fwd(h, spec)
        c[f"{name}.pre"] = z
        h = activation(z)
        feats[name] = h
    c["bottleneck"] = h.transpose(1, 0, 2, 3)
    for name, skip in _DECODER:
        spec = model.conv(name)
        u = upsample2(h)
        c[f"{name}.shape"] = u.shape
        z, c[f"{name}.cols"] = _conv_fwd(u, spec)
        if model.config.skip_connections:
            z += feats[skip]
        c[f"{name}.pre"] = z
        h = activation(z)
    c["head.shape"] = h.shape
    out, c["head.cols"] = _conv_fwd(h, model.conv("head"))
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def backward(model: ModelState, cache: dict, grad_out: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients for a ``forward`` call recorded in ``cache``."""
    grads = {}

    def conv_back(name, g):
        gx, gw, gb = _conv_bwd(cache[f"{name}.shape"], model.conv(name), g, cache[f"{name}.cols"])
        grads[f"{name}.weight"], grads[f"{name}.bias"] = gw, gb
        return gx

    g = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3), dtype=model.dtype)
    g = conv_back("head", g)
    skip_grads = {}
    for name, skip in reversed(_DECODER):
        gz = activation_backward(cache[f"{name}.pre"], g)
        if model.config.skip_connections:
            skip_grads[skip] = gz
        g = upsample2_backward(conv_back(name, gz))
    for name in reversed(_ENCODER):
        if name in skip_grads:
            g = g + skip_grads[name]
        gz = activation_backward(cache[f"{name}.pre"], g)
        g = conv_back(name, gz)
    return {k: grads[k] for k in model.params}


def split_layers(out: np.ndarray):
    """Channels [0, 3) are layer 0, channels [3, 6) are layer 1."""
    if out.ndim != 4 or out.shape[1] != OUT_CHANNELS:
        raise ShapeError(f"expected (N, 6, H, W) tensor, got shape {out.shape}")
    return out[:, :3], out[:, 3:]


# -- losses -----------------------------------------------------------------


@dataclass(frozen=True)
class LossBreakdown:
    loss_l0: float
    loss_l1: float
    total: float

    def to_json(self) -> dict:
        return {"loss_l0": self.loss_l0, "loss_l1": self.loss_l1, "total": self.total}


def l1_loss(pred: np.ndarray, gt: np.ndarray):
    """Mean absolute error and its (sub)gradient, with sign(0) = 0."""
    if pred.shape != gt.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    d = pred - gt.astype(pred.dtype, copy=False)
    value = float(np.mean(np.abs(d), dtype=np.float64))
    grad = np.sign(d) / pred.dtype.type(d.size)
    return value, grad


def total_loss(out: np.ndarray, gt_l0: np.ndarray, gt_l1: np.ndarray):
    """Sum of the per-layer L1 losses; returns ``(LossBreakdown, grad_out)``."""
    p0, p1 = split_layers(out)
    v0, g0 = l1_loss(p0, gt_l0)
    v1, g1 = l1_loss(p1, gt_l1)
    return LossBreakdown(v0, v1, v0 + v1), np.concatenate([g0, g1], axis=1)


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(model: ModelState, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        for name, arr in model.params.items():
            raw = name.encode("utf-8")
            dims = tuple(arr.shape) + (1,) * (4 - arr.ndim)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<4I", *dims))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, config: ModelConfig | None = None) -> ModelState:
    """Read a checkpoint; the config is inferred from the stem when not given."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    if len(blob) < 8 or struct.unpack_from("<I", blob, 4)[0] != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version")
    pos, raw_params = 8, {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + n].decode("utf-8")
            pos += n
            dims = struct.unpack_from("<4I", blob, pos)
            pos += 16
            count = int(np.prod(dims))
            if pos + 4 * count > len(blob):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            raw_params[name] = (np.frombuffer(blob, "<f4", count, pos).astype(np.float32), dims)
            pos += 4 * count
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if config is None:
        if "stem.weight" not in raw_params:
            raise CheckpointError(f"{path}: missing stem.weight")
        config = ModelConfig(base_channels=int(raw_params["stem.weight"][1][0]))
    expected = config.param_shapes()
    if set(raw_params) != set(expected):
        raise CheckpointError(f"{path}: parameter names do not match the model config")
    params = {}
    for name, shape in expected.items():
        arr, dims = raw_params[name]
        if dims != tuple(shape) + (1,) * (4 - len(shape)):
            raise CheckpointError(f"{path}: {name} has dims {dims}, expected {shape}")
        params[name] = arr.reshape(shape)
    return ModelState(config, params)

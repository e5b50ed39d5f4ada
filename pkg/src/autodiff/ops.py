# src/autodiff/ops.py
"""
Forward primitives with exact reverse-mode gradients.

Functional entry points (conv2d, pool_max2, ...) validate shapes and raise
ShapeError / ConfigError; the Function subclasses assume valid input.
"""
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from src.autodiff.tensor import SCALAR_SHAPE, Function, Tensor, as_tensor
from src.errors import ConfigError, ShapeError

LEAKY_SLOPE = 0.2
NORM_EPS = 1e-5
LOG_CLAMP = 1e-12

ArrayLike = Union[Tensor, np.ndarray, float]


# =============================================================================
# Elementwise arithmetic (numpy broadcasting; grads are un-broadcast)
# =============================================================================
class Add(Function):
    kind = "add"

    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(grad, self.shapes[1])


class Sub(Function):
    kind = "sub"

    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    kind = "mul"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return self.unbroadcast(grad * self.b, self.a.shape), self.unbroadcast(grad * self.a, self.b.shape)


class Abs(Function):
    kind = "abs"

    def forward(self, x):
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad):
        return (grad * self.sign,)

    def branch(self):
        return self.sign


class Log(Function):
    """Natural log clamped at LOG_CLAMP; no gradient flows where the clamp is active."""
    kind = "log"

    def forward(self, x):
        self.x = x
        self.active = x > LOG_CLAMP
        return np.log(np.maximum(x, LOG_CLAMP))

    def backward(self, grad):
        safe = np.where(self.active, self.x, 1.0)
        return (np.where(self.active, grad / safe, 0.0).astype(grad.dtype),)

    def branch(self):
        return self.active


class Sum(Function):
    kind = "sum"

    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype).reshape(SCALAR_SHAPE)

    def backward(self, grad):
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Function):
    kind = "mean"

    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.mean(), dtype=x.dtype).reshape(SCALAR_SHAPE)

    def backward(self, grad):
        n = float(np.prod(self.shape))
        return (np.broadcast_to(grad / n, self.shape).astype(grad.dtype),)


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def abs_(x: Tensor) -> Tensor:
    return Abs.apply(x)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


def sum_(x: Tensor) -> Tensor:
    return Sum.apply(x)


def mean(x: Tensor) -> Tensor:
    return Mean.apply(x)


# =============================================================================
# Convolution
# =============================================================================
class Conv2d(Function):
    kind = "conv2d"

    def forward(self, x, w, b, stride: int = 1, pad: int = 0):
        self.stride, self.pad = stride, pad
        self.x_shape = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        o, c, kh, kw = w.shape
        # (B, Ho, Wo, C, kh, kw) windows flattened once into an im2col matrix
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        bsz, _, ho, wo = windows.shape[:4]
        self.cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, c * kh * kw)
        self.w = w
        self.padded_shape = xp.shape
        out = self.cols @ w.reshape(o, -1).T + b.reshape(1, -1)  # (B*Ho*Wo, O)
        return np.ascontiguousarray(out.reshape(bsz, ho, wo, o).transpose(0, 3, 1, 2))

    def backward(self, grad):
        s = self.stride
        bsz, o, ho, wo = grad.shape
        _, c, kh, kw = self.w.shape
        g2 = grad.transpose(0, 2, 3, 1).reshape(-1, o)
        dw = (g2.T @ self.cols).reshape(self.w.shape)
        db = grad.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
        dcols = (g2 @ self.w.reshape(o, -1)).reshape(bsz, ho, wo, c, kh, kw)
        dxp = np.zeros(self.padded_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[..., i, j].transpose(0, 3, 1, 2)
        p = self.pad
        dx = dxp[:, :, p:p + self.x_shape[2], p:p + self.x_shape[3]] if p else dxp
        return dx, dw.astype(grad.dtype), db.astype(grad.dtype)


def conv2d(input: Tensor, weights: Tensor, bias: ArrayLike = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation. weights: (filters, depth, k, k); bias: (1, filters, 1, 1)."""
    w = as_tensor(weights, like=input)
    if stride < 1 or pad < 0:
        raise ConfigError(f"conv2d needs stride >= 1 and pad >= 0, got stride={stride} pad={pad}")
    if w.shape[1] != input.shape[1]:
        raise ConfigError(
            f"conv2d input channels do not match filter depth: input {input.shape} vs filters {w.shape}")
    kh, kw = w.shape[2], w.shape[3]
    if kh > input.shape[2] + 2 * pad or kw > input.shape[3] + 2 * pad:
        raise ShapeError(f"conv2d kernel {kh}x{kw} does not fit padded input {input.shape} with pad {pad}")
    if bias is None:
        bias = np.zeros((1, w.shape[0], 1, 1), dtype=input.dtype)
    b = as_tensor(bias, like=input)
    if b.data.size != w.shape[0]:
        raise ConfigError(f"conv2d bias has {b.data.size} entries for {w.shape[0]} filters")
    return Conv2d.apply(input, w, b, stride=stride, pad=pad)


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


# =============================================================================
# Pooling / resampling
# =============================================================================
class MaxPool2(Function):
    kind = "pool_max2"

    def forward(self, x):
        b, c, h, w = x.shape
        # windows flattened row-major: (0,0), (0,1), (1,0), (1,1)
        win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
        self.arg = win.argmax(axis=-1)  # first occurrence on ties
        self.x_shape = x.shape
        return np.take_along_axis(win, self.arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        b, c, h, w = self.x_shape
        mask = np.zeros((b, c, h // 2, w // 2, 4), dtype=grad.dtype)
        np.put_along_axis(mask, self.arg[..., None], grad[..., None], axis=-1)
        dx = mask.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (dx,)

    def branch(self):
        return self.arg


def pool_max2(input: Tensor) -> Tensor:
    _, _, h, w = input.shape
    if h % 2 or w % 2:
        raise ShapeError(f"pool_max2 needs even spatial dimensions, got {input.shape}")
    return MaxPool2.apply(input)


class Upsample2(Function):
    kind = "upsample2"

    def forward(self, x):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, grad):
        b, c, h, w = grad.shape
        return (grad.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)


def upsample2(input: Tensor) -> Tensor:
    """Nearest-neighbour x2."""
    return Upsample2.apply(input)


class GlobalAvgPool(Function):
    kind = "pool_global_avg"

    def forward(self, x):
        self.x_shape = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, grad):
        h, w = self.x_shape[2], self.x_shape[3]
        return (np.broadcast_to(grad / (h * w), self.x_shape).astype(grad.dtype),)


def pool_global_avg(input: Tensor) -> Tensor:
    return GlobalAvgPool.apply(input)


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """(n_out, n_in) half-pixel bilinear interpolation matrix (edge-clamped)."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        src = min(max((o + 0.5) * scale - 0.5, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    return m.astype(dtype)


class ResizeBilinear(Function):
    kind = "resize_bilinear"

    def forward(self, x, size: Tuple[int, int] = None):
        self.rh = bilinear_matrix(x.shape[2], size[0], x.dtype)
        self.rw = bilinear_matrix(x.shape[3], size[1], x.dtype)
        return np.matmul(np.matmul(self.rh, x), self.rw.T)

    def backward(self, grad):
        return (np.matmul(np.matmul(self.rh.T, grad), self.rw),)


def resize_bilinear(input: Tensor, size: Tuple[int, int]) -> Tensor:
    if size[0] <= 0 or size[1] <= 0:
        raise ShapeError(f"resize target must be positive, got {size}")
    if tuple(input.shape[2:]) == tuple(size):
        return input
    return ResizeBilinear.apply(input, size=tuple(size))


# =============================================================================
# Normalisation
# =============================================================================
@dataclass
class RunningStats:
    """Per-channel running mean/variance used at inference (exponential moving average)."""
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray):
        m = self.momentum
        self.mean[...] = (1 - m) * self.mean + m * batch_mean.astype(self.mean.dtype)
        self.var[...] = (1 - m) * self.var + m * batch_var.astype(self.var.dtype)


class Standardize(Function):
    """(x - mean) / sqrt(var + eps) with per-channel statistics over batch x H x W."""
    kind = "standardize"

    def forward(self, x, eps: float = NORM_EPS, running: RunningStats = None):
        mu = x.mean(axis=(0, 2, 3), keepdims=True)
        var = x.var(axis=(0, 2, 3), keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mu) * self.inv_std
        if running is not None:
            running.update(mu.reshape(-1), var.reshape(-1))
        return self.xhat

    def backward(self, grad):
        g_mean = grad.mean(axis=(0, 2, 3), keepdims=True)
        gx_mean = (grad * self.xhat).mean(axis=(0, 2, 3), keepdims=True)
        return (self.inv_std * (grad - g_mean - self.xhat * gx_mean),)


def standardize(input: Tensor, eps: float = NORM_EPS, training: bool = True, running: RunningStats = None) -> Tensor:
    """Parameter-free standardisation: batch statistics in training, running statistics at inference."""
    if eps <= 0:
        raise ConfigError(f"normalisation eps must be > 0, got {eps}")
    if training or running is None:
        return Standardize.apply(input, eps=eps, running=running if training else None)
    dtype = input.dtype
    inv = (1.0 / np.sqrt(running.var.astype(dtype) + dtype.type(eps))).reshape(1, -1, 1, 1)
    shift = (-running.mean.astype(dtype)).reshape(1, -1, 1, 1)
    return mul(add(input, Tensor(shift)), Tensor(inv))


def normalize_batch(input: Tensor, gamma: ArrayLike, beta: ArrayLike, eps: float = NORM_EPS,
                    training: bool = True, running: RunningStats = None) -> Tensor:
    c = input.shape[1]
    g = as_tensor(_per_channel(gamma, c, input.dtype), like=input)
    b = as_tensor(_per_channel(beta, c, input.dtype), like=input)
    return add(mul(standardize(input, eps, training, running), g), b)


@dataclass
class SpadeModulation:
    """Two small conv banks mapping the condition to per-pixel scale (1 + gamma) and shift (beta)."""
    w_gamma: Tensor
    b_gamma: Tensor
    w_beta: Tensor
    b_beta: Tensor


def normalize_spade(input: Tensor, condition: ArrayLike, modulation: SpadeModulation, eps: float = NORM_EPS,
                    training: bool = True, running: RunningStats = None) -> Tensor:
    """Spatially-adaptive normalisation: standardise, then modulate by maps predicted from the resized condition."""
    if isinstance(condition, np.ndarray) and (condition.ndim != 4 or min(condition.shape[2:]) == 0):
        raise ShapeError(f"SPADE condition needs a non-empty spatial extent, got {condition.shape}")
    cond = as_tensor(condition, like=input)
    cond = resize_bilinear(cond, input.shape[2:])
    k = modulation.w_gamma.shape[2]
    gamma = conv2d(cond, modulation.w_gamma, modulation.b_gamma, stride=1, pad=k // 2) + 1.0
    beta = conv2d(cond, modulation.w_beta, modulation.b_beta, stride=1, pad=k // 2)
    return add(mul(standardize(input, eps, training, running), gamma), beta)


def _per_channel(value, channels: int, dtype) -> np.ndarray:
    if isinstance(value, Tensor):
        if value.data.size != channels:
            raise ConfigError(f"per-channel parameter has {value.data.size} entries for {channels} channels")
        return value
    arr = np.asarray(value, dtype=dtype)
    if arr.size == 1:
        arr = np.full(channels, arr.reshape(-1)[0], dtype=dtype)
    if arr.size != channels:
        raise ConfigError(f"per-channel parameter has {arr.size} entries for {channels} channels")
    return arr.reshape(1, channels, 1, 1)


# =============================================================================
# Dense
# =============================================================================
class Dense(Function):
    kind = "dense"

    def forward(self, x, w, b):
        self.x_shape = x.shape
        self.x2 = x.reshape(x.shape[0], -1)
        self.w2 = w.reshape(w.shape[2], w.shape[3])
        out = self.x2 @ self.w2 + b.reshape(1, -1)
        return out.reshape(out.shape[0], out.shape[1], 1, 1)

    def backward(self, grad):
        g2 = grad.reshape(grad.shape[0], grad.shape[1])
        dx = (g2 @ self.w2.T).reshape(self.x_shape)
        dw = (self.x2.T @ g2).reshape(1, 1, *self.w2.shape)
        db = g2.sum(axis=0).reshape(1, -1, 1, 1)
        return dx, dw, db


def dense(input: Tensor, weights: Tensor, bias: ArrayLike = None) -> Tensor:
    """Affine map of the flattened input. weights: (1, 1, in_features, out_features)."""
    w = as_tensor(weights, like=input)
    features = int(np.prod(input.shape[1:]))
    if w.shape[0] != 1 or w.shape[1] != 1 or w.shape[2] != features:
        raise ConfigError(f"dense weight rows {w.shape} do not match flattened input features {features} of {input.shape}")
    if bias is None:
        bias = np.zeros((1, w.shape[3], 1, 1), dtype=input.dtype)
    b = as_tensor(bias, like=input)
    if b.data.size != w.shape[3]:
        raise ConfigError(f"dense bias has {b.data.size} entries for {w.shape[3]} outputs")
    return Dense.apply(input, w, b)


# =============================================================================
# Activations
# =============================================================================
class Relu(Function):
    kind = "relu"

    def forward(self, x):
        self.mask = x > 0
        return x * self.mask

    def backward(self, grad):
        return (grad * self.mask,)

    def branch(self):
        return self.mask


class LeakyRelu(Function):
    kind = "leaky_relu"

    def forward(self, x, alpha: float = LEAKY_SLOPE):
        self.scale = np.where(x > 0, 1.0, alpha).astype(x.dtype)
        return x * self.scale

    def backward(self, grad):
        return (grad * self.scale,)

    def branch(self):
        return self.scale


class Sigmoid(Function):
    kind = "sigmoid"

    def forward(self, x):
        self.out = expit(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


class Tanh(Function):
    kind = "tanh"

    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1 - self.out ** 2),)


class Softmax(Function):
    """Softmax over the channel (logit) axis."""
    kind = "softmax"

    def forward(self, x):
        e = np.exp(x - x.max(axis=1, keepdims=True))
        self.out = e / e.sum(axis=1, keepdims=True)
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=1, keepdims=True)),)


_ACTIVATIONS = {"relu": Relu, "leaky_relu": LeakyRelu, "sigmoid": Sigmoid, "tanh": Tanh, "softmax": Softmax}


def activation(input: Tensor, kind: str, alpha: float = LEAKY_SLOPE) -> Tensor:
    if kind not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation '{kind}', expected one of {sorted(_ACTIVATIONS)}")
    if kind == "leaky_relu":
        return LeakyRelu.apply(input, alpha=alpha)
    return _ACTIVATIONS[kind].apply(input)


# =============================================================================
# Channel plumbing
# =============================================================================
class Concat(Function):
    kind = "concat_channels"

    def forward(self, a, b):
        self.split = a.shape[1]
        return np.concatenate([a, b], axis=1)

    def backward(self, grad):
        return grad[:, :self.split], grad[:, self.split:]


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels needs matching batch and spatial dims, got {a.shape} and {b.shape}")
    return Concat.apply(a, b)


class SliceChannels(Function):
    kind = "slice_channels"

    def forward(self, x, start: int = 0, stop: int = None):
        self.x_shape, self.start, self.stop = x.shape, start, stop
        return x[:, start:stop]

    def backward(self, grad):
        dx = np.zeros(self.x_shape, dtype=grad.dtype)
        dx[:, self.start:self.stop] = grad
        return (dx,)


def slice_channels(input: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= input.shape[1]:
        raise ShapeError(f"channel slice [{start}:{stop}] out of range for {input.shape}")
    return SliceChannels.apply(input, start=start, stop=stop)


def add_residual(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of equally shaped tensors (callers project channels first)."""
    if a.shape != b.shape:
        raise ShapeError(f"add_residual needs identical shapes, got {a.shape} and {b.shape}")
    return Add.apply(a, b)


def detach(t: Tensor) -> Tensor:
    return t.detach()

"""Rank-4 NHWC tensors and the layer operations the backbone is built from.

A tensor is a C-ordered ``float32`` numpy array of shape ``(n, h, w, c)``.
Operations never modify their inputs. Reductions inside convolution,
pooling and fully connected layers accumulate in float64 and round to
float32 once at the end, so results do not depend on loop tiling.

SAME padding produces ``ceil(size / stride)`` outputs; when the total
padding is odd the extra row/column goes on the bottom/right. Max pooling
treats padded cells as ``-inf``; average pooling leaves them out of the
denominator.
"""
from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ChannelMismatch,
    DimensionMismatch,
    EmptyOutput,
    InvalidRate,
    NonFiniteInput,
    NonFiniteResult,
    ShapeMismatch,
)
from .rng import Xorshift64Star

Tensor = np.ndarray


class Padding(str, enum.Enum):
    SAME = "SAME"
    VALID = "VALID"


class Mode(str, enum.Enum):
    TRAIN = "TRAIN"
    INFER = "INFER"


def tensor(data, shape: Sequence[int] | None = None) -> Tensor:
    """Build a validated NHWC float32 tensor from array-like ``data``."""
    arr = np.array(data, dtype=np.float32, order="C")
    if shape is not None:
        arr = arr.reshape(tuple(shape))
    if arr.ndim != 4:
        raise ShapeMismatch(f"tensor must be rank 4 (n, h, w, c), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeMismatch(f"all tensor dims must be >= 1, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteInput("tensor contains NaN or Inf")
    return arr


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


@dataclass(frozen=True)
class ConvParams:
    weights: np.ndarray  # (kh, kw, c_in, c_out)
    bias: np.ndarray  # (c_out,)
    stride: tuple[int, int] = (1, 1)
    padding: Padding = Padding.VALID

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float32)
        b = np.asarray(self.bias, dtype=np.float32).reshape(-1)
        if w.ndim != 4 or min(w.shape) < 1:
            raise ShapeMismatch(f"conv weights must be (kh, kw, c_in, c_out), got {w.shape}")
        if b.shape[0] != w.shape[3]:
            raise DimensionMismatch(f"bias length {b.shape[0]} != c_out {w.shape[3]}")
        stride = _pair(self.stride)
        if min(stride) < 1:
            raise ValueError(f"stride must be positive, got {stride}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "stride", stride)
        object.__setattr__(self, "padding", Padding(self.padding))

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[0], self.weights.shape[1]

    @property
    def c_in(self) -> int:
        return self.weights.shape[2]

    @property
    def c_out(self) -> int:
        return self.weights.shape[3]


@dataclass(frozen=True)
class PoolParams:
    window: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    padding: Padding = Padding.VALID

    def __post_init__(self):
        window, stride = _pair(self.window), _pair(self.stride)
        if min(window) < 1 or min(stride) < 1:
            raise ValueError(f"window and stride must be positive, got {window}, {stride}")
        object.__setattr__(self, "window", window)
        object.__setattr__(self, "stride", stride)
        object.__setattr__(self, "padding", Padding(self.padding))


def window_geometry(size: int, k: int, s: int, padding: Padding) -> tuple[int, int, int]:
    """Return ``(out_size, pad_before, pad_after)`` along one spatial axis."""
    if Padding(padding) is Padding.VALID:
        if k > size:
            raise EmptyOutput(f"window {k} larger than input {size} under VALID padding")
        return (size - k) // s + 1, 0, 0
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return out, total // 2, total - total // 2


def conv_output_shape(in_shape, kernel, c_out: int, stride, padding) -> tuple[int, int, int, int]:
    n, h, w, _ = in_shape
    (kh, kw), (sh, sw) = _pair(kernel), _pair(stride)
    oh = window_geometry(h, kh, sh, padding)[0]
    ow = window_geometry(w, kw, sw, padding)[0]
    return n, oh, ow, c_out


def pool_output_shape(in_shape, window, stride, padding) -> tuple[int, int, int, int]:
    n, _, _, c = in_shape
    return conv_output_shape(in_shape, window, c, stride, padding)


def _require_finite(x: np.ndarray, what: str) -> None:
    if not np.isfinite(x).all():
        raise NonFiniteInput(f"{what} contains NaN or Inf")


def _checked(out: np.ndarray, what: str, dtype=None) -> np.ndarray:
    if dtype is not None:
        with np.errstate(over="ignore"):
            out = out.astype(dtype)
    if not np.isfinite(out).all():
        raise NonFiniteResult(f"{what} produced NaN or Inf")
    return out


def _windows(x: np.ndarray, window, stride, padding, fill: float):
    """Padded strided windows of shape (n, oh, ow, c, kh, kw) plus the pad amounts."""
    _, h, w, _ = x.shape
    (kh, kw), (sh, sw) = window, stride
    oh, top, bottom = window_geometry(h, kh, sh, padding)
    ow, left, right = window_geometry(w, kw, sw, padding)
    if top or bottom or left or right:
        x = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)), constant_values=fill)
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, : (oh - 1) * sh + 1 : sh, : (ow - 1) * sw + 1 : sw]
    return win, (top, bottom, left, right)


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    if x.ndim != 4:
        raise ShapeMismatch(f"conv2d expects rank-4 input, got {x.shape}")
    if x.shape[3] != p.c_in:
        raise ChannelMismatch(f"input has {x.shape[3]} channels, kernel expects {p.c_in}")
    _require_finite(x, "conv2d input")
    kh, kw = p.kernel
    win, _ = _windows(x.astype(np.float64), (kh, kw), p.stride, p.padding, 0.0)
    n, oh, ow = win.shape[:3]
    # (n, oh, ow, c, kh, kw) -> rows ordered (kh, kw, c) to match the kernel layout
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * p.c_in)
    kmat = p.weights.astype(np.float64).reshape(kh * kw * p.c_in, p.c_out)
    out = cols @ kmat + p.bias.astype(np.float64)
    return _checked(out.reshape(n, oh, ow, p.c_out), "conv2d", np.float32)


def relu(x: Tensor) -> Tensor:
    _require_finite(x, "relu input")
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def tanh_act(x: Tensor) -> Tensor:
    _require_finite(x, "tanh input")
    return np.tanh(x)


def max_pool(x: Tensor, p: PoolParams) -> Tensor:
    _require_finite(x, "max_pool input")
    win, _ = _windows(x, p.window, p.stride, p.padding, -np.inf)
    return _checked(win.max(axis=(4, 5)).astype(np.float32), "max_pool")


def avg_pool(x: Tensor, p: PoolParams) -> Tensor:
    _require_finite(x, "avg_pool input")
    win, pads = _windows(x.astype(np.float64), p.window, p.stride, p.padding, 0.0)
    sums = win.sum(axis=(4, 5))
    if any(pads):
        ones = np.ones((1, x.shape[1], x.shape[2], 1))
        counts, _ = _windows(ones, p.window, p.stride, p.padding, 0.0)
        sums = sums / counts.sum(axis=(4, 5))
    else:
        sums = sums / (p.window[0] * p.window[1])
    return _checked(sums, "avg_pool", np.float32)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ShapeMismatch("concat needs at least one input")
    base = xs[0].shape[:3]
    for x in xs[1:]:
        if x.shape[:3] != base:
            raise ShapeMismatch(f"concat inputs disagree on (n, h, w): {base} vs {x.shape[:3]}")
    return np.concatenate(xs, axis=3)


def fully_connected(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``W @ x + b`` for a vector ``x`` of length D, or row-wise for an (n, D) batch."""
    W = np.asarray(W)
    b = np.asarray(b)
    if W.ndim != 2 or b.shape != (W.shape[0],):
        raise DimensionMismatch(f"weights {W.shape} and bias {b.shape} do not form a K x D layer")
    if x.shape[-1] != W.shape[1] or x.ndim not in (1, 2):
        raise DimensionMismatch(f"input {x.shape} does not match weights {W.shape}")
    _require_finite(x, "fully_connected input")
    out_dtype = np.result_type(x.dtype, W.dtype, np.float32)
    out = x.astype(np.float64) @ W.astype(np.float64).T + b.astype(np.float64)
    return _checked(out, "fully_connected", out_dtype)


def dropout(x: Tensor, rate: float, mode: Mode, rng: Xorshift64Star | None = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"dropout rate must be in [0, 1), got {rate}")
    if Mode(mode) is Mode.INFER or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("TRAIN-mode dropout needs a generator")
    keep = rng.uniform_array(x.size).reshape(x.shape) >= rate
    scale = x.dtype.type(1.0 / (1.0 - rate))
    return np.where(keep, x * scale, x.dtype.type(0))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = np.asarray(logits)
    if z.shape[-1] < 1:
        raise DimensionMismatch("softmax needs at least one logit")
    _require_finite(z, "softmax input")
    out_dtype = z.dtype if np.issubdtype(z.dtype, np.floating) else np.float64
    z = z.astype(np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return (e / e.sum(axis=-1, keepdims=True)).astype(out_dtype)


def flatten(x: Tensor) -> np.ndarray:
    """(n, h, w, c) -> (n, h*w*c), row-major."""
    return x.reshape(x.shape[0], -1)

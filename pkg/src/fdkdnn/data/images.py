"""Resizing and normalisation of decoded images into backbone input tensors."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch, ZeroStd
from ..graph.manifest import ModelManifest, Preprocessing
from .ppm import decode_image


def _axis_taps(in_size: int, out_size: int):
    # half-pixel centres, clamped to the valid range
    src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, in_size - 1)
    return lo, hi, src - lo


def resize_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if out_h < 1 or out_w < 1:
        raise ShapeMismatch(f"output size must be positive, got {out_h}x{out_w}")
    if x.ndim != 4:
        raise ShapeMismatch(f"expected an (n, h, w, c) tensor, got {x.shape}")
    _, h, w, _ = x.shape
    x = x.astype(np.float64)
    r0, r1, fr = _axis_taps(h, out_h)
    c0, c1, fc = _axis_taps(w, out_w)
    fr = fr[None, :, None, None]
    fc = fc[None, None, :, None]
    rows = x[:, r0] * (1 - fr) + x[:, r1] * fr
    out = rows[:, :, c0] * (1 - fc) + rows[:, :, c1] * fc
    return out.astype(np.float32)


def _channel_vectors(x: np.ndarray, prep: Preprocessing):
    mean = np.asarray(prep.mean, dtype=np.float64)
    std = np.asarray(prep.std, dtype=np.float64)
    if mean.shape != (x.shape[-1],) or std.shape != (x.shape[-1],):
        raise ShapeMismatch(f"preprocessing has {mean.size} channels, image has {x.shape[-1]}")
    if (std == 0).any():
        raise ZeroStd("preprocessing std must be nonzero")
    return mean, std


def normalize(x: np.ndarray, prep: Preprocessing) -> np.ndarray:
    mean, std = _channel_vectors(x, prep)
    return ((x.astype(np.float64) * prep.scale - mean) / std).astype(np.float32)


def denormalize(x: np.ndarray, prep: Preprocessing) -> np.ndarray:
    mean, std = _channel_vectors(x, prep)
    return ((x.astype(np.float64) * std + mean) / prep.scale).astype(np.float32)


def load_input(path, model: ModelManifest) -> np.ndarray:
    """decode -> resize -> normalise: a (1, h, w, c) tensor matching the model input."""
    h, w, c = model.input_shape
    img = decode_image(path)
    if img.shape[3] != c:
        raise ShapeMismatch(f"{path}: image has {img.shape[3]} channels, model expects {c}")
    if img.shape[1:3] != (h, w):
        img = resize_bilinear(img, h, w)
    return normalize(img, model.preprocessing)

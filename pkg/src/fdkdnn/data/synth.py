"""Synthetic labelled image corpus for desk-scale end-to-end runs.

Class ``k`` gets a base colour at hue ``offset + k / n_classes`` on the
HSV wheel, a stripe texture whose amplitude, period and orientation
depend on ``k``, and per-pixel Gaussian noise. With the default noise
level the class means sit far apart in RGB space, so the classes are
linearly separable by mean colour.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .._io import atomic_write_bytes
from ..rng import Xorshift64Star
from .dataset import DatasetManifest, ImageRecord, Split, content_hash
from .ppm import encode_ppm

FIXTURE_TAXONOMY = ("damaged_kernel", "leaf", "normal_kernel", "spike")


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int
    images_per_class: int
    size: tuple[int, int] = (32, 32)
    seed: int = 7
    noise_std: float = 12.0
    saturation: float = 0.6
    value: float = 0.8
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.n_classes}")
        if self.images_per_class < 1:
            raise ValueError("images_per_class must be positive")
        if self.class_names is not None and len(self.class_names) != self.n_classes:
            raise ValueError("class_names length must equal n_classes")

    def names(self) -> tuple[str, ...]:
        if self.class_names is not None:
            return tuple(self.class_names)
        return tuple(f"class_{k:02d}" for k in range(self.n_classes))


def class_colors(spec: SynthSpec) -> np.ndarray:
    """(n_classes, 3) base colours in 0..255."""
    offset = Xorshift64Star(spec.seed, 0xC010).random()
    return np.array([
        colorsys.hsv_to_rgb((offset + k / spec.n_classes) % 1.0, spec.saturation, spec.value)
        for k in range(spec.n_classes)
    ]) * 255.0


def render_image(spec: SynthSpec, k: int, i: int, base: np.ndarray) -> np.ndarray:
    h, w = spec.size
    amplitude = 6.0 + 4.0 * (k % 3)
    period = 4 + k % 5
    axis = np.arange(h if k % 2 == 0 else w)
    stripe = amplitude * np.sin(2 * np.pi * axis / period)
    stripe = stripe[:, None] if k % 2 == 0 else stripe[None, :]
    noise = Xorshift64Star(spec.seed, k, i).normal_array(h * w * 3).reshape(h, w, 3)
    img = base[None, None, :] + stripe[..., None] + spec.noise_std * noise
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synth_dataset(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Write ``out_dir/<class>/<class>_NNNN.ppm`` and return the (unsplit) manifest."""
    out_dir = Path(out_dir)
    colors = class_colors(spec)
    names = spec.names()
    records = []
    for k, name in enumerate(names):
        for i in range(spec.images_per_class):
            path = out_dir / name / f"{name}_{i:04d}.ppm"
            atomic_write_bytes(path, encode_ppm(render_image(spec, k, i, colors[k])))
            records.append(ImageRecord(str(path), name, Split.UNASSIGNED, content_hash(path)))
    records.sort(key=lambda r: r.path)
    return DatasetManifest(tuple(sorted(names)), tuple(records))

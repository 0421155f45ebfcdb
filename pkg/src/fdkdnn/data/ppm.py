"""Binary PPM (P6) codec plus a registry for other raster formats.

Only ``maxval == 255`` is accepted. The encoder always writes the
canonical header ``P6\\n<w> <h>\\n255\\n``, so decode/encode round-trips
byte for byte on files that use it.
"""
from __future__ import annotations

from collections.abc import Callable
from pathlib import Path

import numpy as np

from ..errors import CorruptHeader, TruncatedPayload, UnsupportedFormat

_WHITESPACE = b" \t\n\r\v\f"

# suffix (lower case, with dot) -> callable(path) returning an (h, w, 3) array in 0..255
_DECODERS: dict[str, Callable[[Path], np.ndarray]] = {}


def register_decoder(suffix: str, decoder: Callable[[Path], np.ndarray]) -> None:
    """Route files with ``suffix`` (e.g. ``".png"``) that are not P6 through ``decoder``."""
    _DECODERS[suffix.lower()] = decoder


def unregister_decoder(suffix: str) -> None:
    _DECODERS.pop(suffix.lower(), None)


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        if data[pos] in _WHITESPACE:
            pos += 1
        elif data[pos] == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
        pos += 1
    if start == pos:
        raise CorruptHeader("unexpected end of PPM header")
    return data[start:pos], pos


def parse_ppm(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one P6 image starting at ``offset``.

    Returns the (h, w, 3) uint8 pixels and the offset just past the payload,
    so concatenated PPM streams can be walked image by image.
    """
    if data[offset : offset + 2] != b"P6":
        raise UnsupportedFormat("not a binary PPM (P6) image")
    pos = offset + 2
    fields = []
    for name in ("width", "height", "maxval"):
        token, pos = _next_token(data, pos)
        if not token.isdigit():
            raise CorruptHeader(f"PPM {name} is not a number: {token!r}")
        fields.append(int(token))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise CorruptHeader(f"PPM has empty dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormat(f"only maxval 255 is supported, got {maxval}")
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise CorruptHeader("PPM header not terminated by whitespace")
    pos += 1
    size = width * height * 3
    if len(data) - pos < size:
        raise TruncatedPayload(f"PPM payload has {len(data) - pos} of {size} bytes")
    pixels = np.frombuffer(data, dtype=np.uint8, count=size, offset=pos).reshape(height, width, 3)
    return pixels, pos + size


def decode_image(path) -> np.ndarray:
    """Load an RGB image as a (1, h, w, 3) float32 tensor with values in [0, 255]."""
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(b"P6"):
        pixels, _ = parse_ppm(data)
    elif path.suffix.lower() in _DECODERS:
        pixels = np.asarray(_DECODERS[path.suffix.lower()](path))
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise UnsupportedFormat(f"decoder for {path.suffix} returned shape {pixels.shape}")
    else:
        raise UnsupportedFormat(f"{path}: no decoder for this format")
    return pixels.astype(np.float32)[None]


def encode_ppm(image: np.ndarray) -> bytes:
    """Encode an (h, w, 3) or (1, h, w, 3) image; values are rounded and clipped to 0..255."""
    img = np.asarray(image)
    if img.ndim == 4 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an RGB image, got shape {img.shape}")
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()

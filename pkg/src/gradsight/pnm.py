"""Binary PNM (P5 greyscale / P6 RGB, 8-bit) encoding and decoding.

Decoded images are float32 arrays ``(channels, rows, cols)`` in ``[0, 1]``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PNMError(ValueError):
    pass


def _tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise PNMError("truncated PNM header")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def decode(data: bytes) -> np.ndarray:
    tokens, offset = _tokens(data, 4)
    magic = tokens[0]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise PNMError(f"unsupported PNM magic {magic!r}; expected P5 or P6")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PNMError(f"malformed PNM header {tokens!r}") from exc
    if maxval != 255:
        raise PNMError(f"only maxval 255 is supported, got {maxval}")
    n = width * height * channels
    raster = data[offset : offset + n]
    if len(raster) != n:
        raise PNMError(f"PNM raster truncated: expected {n} bytes, got {len(raster)}")
    px = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return px.transpose(2, 0, 1).astype(np.float32) / 255


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Quantise a ``[0, 1]`` image to uint8 (values outside are clipped)."""
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0, 1) * 255).astype(np.uint8)


def encode(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise PNMError(f"expected a (1|3, rows, cols) image, got shape {img.shape}")
    c, h, w = img.shape
    magic = b"P5" if c == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (w, h)
    return header + to_bytes(img).transpose(1, 2, 0).tobytes()


def read_image(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def write_image(path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode(image))


def normalize(values: np.ndarray) -> np.ndarray:
    """Min-max rescale to ``[0, 1]``; a constant array maps to zeros."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)

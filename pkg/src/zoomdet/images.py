"""Grayscale image IO (binary PGM/PPM) and bilinear resizing.

Images travel through the pipeline as float32 arrays of shape (h, w) with
values in [0, 1]. Files are 8-bit binary PGM (P5); P6 PPM files load too and
are collapsed to grayscale by averaging the channels. Resizing uses
half-pixel-center bilinear sampling; output dimensions round half up and
never drop below 1 pixel.
"""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def write_pgm(path, img: np.ndarray) -> None:
    """8-bit binary PGM from a float image in [0, 1]."""
    if img.ndim != 2:
        raise ValueError(f"expected 2D grayscale image, got shape {img.shape}")
    data = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255)
    data = data.astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _read_header_tokens(f, count: int):
    """PNM header fields, skipping whitespace and # comments."""
    tokens = []
    while len(tokens) < count:
        ch = f.read(1)
        if not ch:
            raise ValueError("truncated image header")
        if ch.isspace():
            continue
        if ch == b"#":
            while ch and ch != b"\n":
                ch = f.read(1)
            continue
        tok = ch
        while True:
            ch = f.read(1)
            if not ch or ch.isspace():
                break
            tok += ch
        tokens.append(tok)
    return tokens


def read_image(path) -> np.ndarray:
    """Load a P5 PGM or P6 PPM as float32 grayscale in [0, 1]."""
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic not in (b"P5", b"P6"):
            raise ValueError(f"{path}: unsupported image format {magic!r}")
        w, h, maxval = (int(t) for t in _read_header_tokens(f, 3))
        if maxval != 255:
            raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
        channels = 1 if magic == b"P5" else 3
        raw = f.read(w * h * channels)
        if len(raw) != w * h * channels:
            raise ValueError(f"{path}: truncated pixel data")
    arr = np.frombuffer(raw, dtype=np.uint8).astype(np.float32) / 255.0
    if channels == 1:
        return arr.reshape(h, w)
    return arr.reshape(h, w, 3).mean(axis=2)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resample to (out_h, out_w)."""
    if img.ndim != 2:
        raise ValueError(f"expected 2D image, got shape {img.shape}")
    h, w = img.shape
    if h < 1 or w < 1 or out_h < 1 or out_w < 1:
        raise ValueError(f"degenerate dimensions {img.shape} -> ({out_h}, {out_w})")
    if (out_h, out_w) == (h, w):
        return img.copy()
    src = np.asarray(img, dtype=np.float32)

    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(np.float32)[:, None]
    fx = (xs - x0).astype(np.float32)[None, :]

    top = src[y0[:, None], x0[None, :]] * (1 - fx) + src[y0[:, None], x1[None, :]] * fx
    bot = src[y1[:, None], x0[None, :]] * (1 - fx) + src[y1[:, None], x1[None, :]] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def resize_by_factor(img: np.ndarray, factor: float) -> np.ndarray:
    if not factor > 0:
        raise ValueError(f"resize factor must be positive, got {factor}")
    h, w = img.shape
    return bilinear_resize(
        img, max(1, round_half_up(h * factor)), max(1, round_half_up(w * factor))
    )


def resize_long_side(img: np.ndarray, long_side: int) -> Tuple[np.ndarray, float]:
    """Aspect-preserving resize so max(h, w) == long_side; returns (image, factor)."""
    if long_side < 1:
        raise ValueError(f"long side must be >= 1, got {long_side}")
    h, w = img.shape
    factor = long_side / max(h, w)
    out_h = max(1, round_half_up(h * factor))
    out_w = max(1, round_half_up(w * factor))
    return bilinear_resize(img, out_h, out_w), factor

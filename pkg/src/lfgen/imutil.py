"""Small shared image helpers: luma, bilinear sampling, 8-bit quantization."""

from __future__ import annotations

import numpy as np

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def luma(pixels: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an (..., 3) RGB array."""
    return pixels @ LUMA_WEIGHTS


def sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear sample of an (H, W[, C]) image at fractional positions, edge-clamped.

    Exact gather at integer positions.
    """
    H, W = img.shape[0], img.shape[1]
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0.0, H - 1.0)
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0.0, W - 1.0)
    y0 = np.minimum(np.floor(ys).astype(np.int64), max(H - 2, 0))
    x0 = np.minimum(np.floor(xs).astype(np.int64), max(W - 2, 0))
    fy = ys - y0
    fx = xs - x0
    if img.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bot = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1.0 - fy) * top + fy * bot


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize [0,1] floats to 8-bit: value = round(255 * c)."""
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    """Invert 8-bit quantization: c = value / 255."""
    return img.astype(np.float64) / 255.0

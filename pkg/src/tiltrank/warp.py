"""Tilt warping and Gaussian blur for ``[C, H, W]`` images with values in [0, 1]."""

from __future__ import annotations

import numpy as np

from .fields import TiltMap
from .tensor import DTYPE

MODES = ("tilt", "blur", "tilt+blur")
DEFAULT_SIGMA = 1.0
DEFAULT_KSIZE = 5


def check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=DTYPE)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"image must be [C,H,W] with C in {{1,3}}, got dims {img.shape}")
    return img


def bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``img[:, ys, xs]`` bilinearly, clamping coordinates to the frame."""
    _, h, w = img.shape
    ys = np.clip(ys, 0.0, h - 1)
    xs = np.clip(xs, 0.0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = ys - y0
    wx = xs - x0
    top = img[:, y0, x0] * (1.0 - wx) + img[:, y0, x1] * wx
    bottom = img[:, y1, x0] * (1.0 - wx) + img[:, y1, x1] * wx
    return top * (1.0 - wy) + bottom * wy


def apply_tilt(img, tilt: TiltMap) -> np.ndarray:
    """Backward warp: ``out[y, x] = img(y + dy[y, x], x + dx[y, x])``.

    Samples falling outside the frame take the nearest border pixel.
    """
    img = check_image(img)
    if tilt.size != img.shape[1:]:
        raise ValueError(f"tilt size {tilt.size} does not match image size {img.shape[1:]}")
    h, w = img.shape[1:]
    gy, gx = np.meshgrid(np.arange(h, dtype=DTYPE), np.arange(w, dtype=DTYPE), indexing="ij")
    out = bilinear_sample(img, gy + tilt.dy, gx + tilt.dx)
    return np.clip(out, 0.0, 1.0)


def gaussian_kernel1d(sigma: float, ksize: int) -> np.ndarray:
    if ksize < 1 or ksize % 2 == 0:
        raise ValueError(f"ksize must be a positive odd integer, got {ksize}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = ksize // 2
    t = np.arange(-r, r + 1, dtype=DTYPE)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma: float = DEFAULT_SIGMA, ksize: int = DEFAULT_KSIZE) -> np.ndarray:
    """Separable Gaussian blur with replicated borders."""
    img = check_image(img)
    k = gaussian_kernel1d(sigma, ksize)
    r = ksize // 2
    _, h, w = img.shape
    p = np.pad(img, ((0, 0), (r, r), (r, r)), mode="edge")
    rows = sum(k[i] * p[:, i : i + h, :] for i in range(ksize))
    out = sum(k[j] * rows[:, :, j : j + w] for j in range(ksize))
    return np.clip(out, 0.0, 1.0)


def degrade(img, tilt: TiltMap | None = None, mode: str = "tilt", blur=None) -> np.ndarray:
    """Tilt and/or blur an image; tilt runs first when both are selected.

    ``blur`` is an optional ``(sigma, ksize)`` pair defaulting to (1.0, 5).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    out = check_image(img)
    if "tilt" in mode:
        if tilt is None:
            raise ValueError(f"mode {mode!r} needs a tilt map")
        out = apply_tilt(out, tilt)
    if "blur" in mode:
        sigma, ksize = blur if blur is not None else (DEFAULT_SIGMA, DEFAULT_KSIZE)
        out = gaussian_blur(out, sigma, ksize)
    return out


def to_gray(img) -> np.ndarray:
    """Channel mean, keeping a singleton channel axis."""
    img = check_image(img)
    return img.mean(axis=0, keepdims=True)

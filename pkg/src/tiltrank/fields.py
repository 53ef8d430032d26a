"""Power-law Gaussian random fields and the tilt maps built from them.

A field is synthesized in the Fourier domain: complex white noise is shaped
by the amplitude filter ``k**-alpha * exp(-(k/k_c)**2)`` (``k`` in cycles per
image, ``k_c = max(H, W) / corr_length``, DC bin zeroed), transformed back,
and the real part normalized to zero mean and unit variance. Because the
filter acts on amplitude, the measured power spectrum falls off as
``k**(-2*alpha)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .tensor import DTYPE

KOLMOGOROV_ALPHA = 5.0 / 3.0
_SEED_MOD = 2**64


@dataclass(frozen=True)
class FieldSpec:
    """Parameters of a power-law random field.

    ``corr_length=None`` disables the Gaussian envelope, leaving the pure
    power law.
    """

    size: tuple[int, int]
    alpha: float = KOLMOGOROV_ALPHA
    corr_length: float | None = None
    strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        h, w = self.size
        if h < 4 or w < 4:
            raise ValueError(f"field size must be at least 4x4, got {self.size}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.corr_length is not None:
            if self.corr_length <= 0:
                raise ValueError(f"corr_length must be positive, got {self.corr_length}")
            if self.corr_length > max(h, w):
                raise ValueError(
                    f"corr_length {self.corr_length} exceeds the field extent {max(h, w)}"
                )
        if self.strength < 0:
            raise ValueError(f"strength must be >= 0, got {self.strength}")
        if not 0 <= int(self.seed) < _SEED_MOD:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class ScalarField:
    values: np.ndarray

    @property
    def size(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class TiltMap:
    """Per-pixel displacement in pixels; ``dx`` along columns, ``dy`` along rows."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        if self.dx.shape != self.dy.shape or self.dx.ndim != 2:
            raise ValueError(f"dx/dy must be equal-size 2-D arrays, got {self.dx.shape}, {self.dy.shape}")

    @property
    def size(self) -> tuple[int, int]:
        return self.dx.shape

    @classmethod
    def zeros(cls, size) -> "TiltMap":
        return cls(np.zeros(size, dtype=DTYPE), np.zeros(size, dtype=DTYPE))

    @classmethod
    def from_array(cls, arr) -> "TiltMap":
        arr = np.asarray(arr, dtype=DTYPE)
        if arr.ndim != 3 or arr.shape[0] != 2:
            raise ValueError(f"tilt tensor must be [2,H,W], got {arr.shape}")
        return cls(arr[0].copy(), arr[1].copy())

    def as_array(self) -> np.ndarray:
        return np.stack([self.dx, self.dy])


def frequency_radius(size: tuple[int, int]) -> np.ndarray:
    """Radial FFT frequency ``sqrt(kx**2 + ky**2)`` in cycles per image."""
    h, w = size
    ky = np.fft.fftfreq(h) * h
    kx = np.fft.fftfreq(w) * w
    return np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)


def spectral_filter(size, alpha: float, corr_length: float | None) -> np.ndarray:
    k = frequency_radius(size)
    filt = np.zeros_like(k)
    nz = k > 0
    filt[nz] = k[nz] ** (-alpha)
    if corr_length is not None:
        k_c = max(size) / corr_length
        filt *= np.exp(-((k / k_c) ** 2))
    return filt


def field_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator for one field; channel streams use seed, seed+1."""
    return np.random.Generator(np.random.Philox(int(seed) % _SEED_MOD))


def generate_scalar_field(spec: FieldSpec) -> ScalarField:
    """Zero-mean, unit-variance field with the spectrum described by ``spec``.

    Noise is drawn as one ``[H, W]`` block of real parts followed by one of
    imaginary parts, both standard normal.
    """
    h, w = spec.size
    rng = field_rng(spec.seed)
    noise = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    f = np.fft.ifft2(noise * spectral_filter(spec.size, spec.alpha, spec.corr_length)).real
    f = f - f.mean()
    std = f.std()
    if std == 0:
        raise ValueError("degenerate field: the spectral filter removed all energy")
    return ScalarField(np.ascontiguousarray(f / std, dtype=DTYPE))


def generate_tilt_map(spec: FieldSpec) -> TiltMap:
    """Two independent fields (seeds ``seed`` and ``seed+1``) scaled by ``strength``."""
    if spec.strength == 0:
        return TiltMap.zeros(spec.size)
    fx = generate_scalar_field(spec)
    fy = generate_scalar_field(replace(spec, seed=(int(spec.seed) + 1) % _SEED_MOD))
    return TiltMap(spec.strength * fx.values, spec.strength * fy.values)


def radial_power(field) -> tuple[np.ndarray, np.ndarray]:
    """Radially averaged periodogram over integer-radius frequency bins.

    Returns ``(k, power)`` for bins ``k = 1, 2, ...`` up to the Nyquist radius.
    """
    f = field.values if isinstance(field, ScalarField) else np.asarray(field, dtype=DTYPE)
    power = np.abs(np.fft.fft2(f)) ** 2
    bins = np.rint(frequency_radius(f.shape)).astype(int)
    total = np.bincount(bins.ravel(), weights=power.ravel())
    count = np.bincount(bins.ravel())
    nyquist = min(f.shape) // 2
    k = np.arange(1, nyquist + 1)
    return k.astype(DTYPE), total[k] / count[k]


def measure_psd_slope(field, k_band: tuple[float, float]) -> float:
    """Least-squares slope of log radial power against log k over ``k_band``."""
    k, p = radial_power(field)
    lo, hi = k_band
    if not 0 < lo < hi or hi > k[-1]:
        raise ValueError(f"band {k_band} must lie inside (0, {k[-1]:g}]")
    sel = (k >= lo) & (k <= hi) & (p > 0)
    if sel.sum() < 2:
        raise ValueError(f"band {k_band} holds fewer than two frequency bins")
    slope, _ = np.polyfit(np.log(k[sel]), np.log(p[sel]), 1)
    return float(slope)

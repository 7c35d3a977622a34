"""Spatio-temporal frequency fusion with a dynamic 3-D Butterworth low-pass.

Transforms run over the (frame, row, col) axes of each channel. Spectra are
kept centred (zero frequency at index ``N // 2`` of every transformed axis)
so the filter can be evaluated literally on the grid ``2 i / N - 1``.
Forward DFT is unnormalised, inverse carries the ``1 / N`` factor.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import as_tensor4, frozen, require_same_shape

log = logging.getLogger(__name__)

AXES = (0, 2, 3)
DEFAULT_ORDER = 4
ALPHA_MIN = 0.05


@dataclass(frozen=True)
class ButterworthSpec:
    order: int = DEFAULT_ORDER
    d_s: float = 1.0
    d_t: float = 1.0

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"Butterworth order must be a positive integer, got {self.order}")
        if not (self.d_s > 0 and self.d_t > 0):
            raise ValueError(f"cut-off radii must be positive, got d_s={self.d_s}, d_t={self.d_t}")

    @classmethod
    def from_cutoff(cls, alpha: float, order: int = DEFAULT_ORDER) -> "ButterworthSpec":
        return cls(order=order, d_s=alpha, d_t=alpha)


def fft3(t) -> np.ndarray:
    """Centred 3-D DFT of each channel over (frame, row, col)."""
    t = as_tensor4(t)
    return np.fft.fftshift(np.fft.fftn(t, axes=AXES), axes=AXES)


def ifft3(spectrum, return_residue: bool = False):
    """Inverse of :func:`fft3`; returns the real part.

    With ``return_residue`` the largest discarded imaginary magnitude is
    returned alongside.
    """
    z = np.fft.ifftn(np.fft.ifftshift(spectrum, axes=AXES), axes=AXES)
    out = np.ascontiguousarray(z.real)
    if return_residue:
        return out, float(np.max(np.abs(z.imag))) if z.size else 0.0
    return out


def centered_grid(n: int) -> np.ndarray:
    return 2.0 * np.arange(n) / n - 1.0


def frequency_distance(frames: int, height: int, width: int, d_s: float, d_t: float) -> np.ndarray:
    ft = (d_s / d_t) * centered_grid(frames)
    fh = centered_grid(height)
    fw = centered_grid(width)
    return np.sqrt(ft[:, None, None] ** 2 + fh[None, :, None] ** 2 + fw[None, None, :] ** 2)


@lru_cache(maxsize=64)
def _butterworth_cached(frames: int, height: int, width: int, spec: ButterworthSpec) -> np.ndarray:
    d = frequency_distance(frames, height, width, spec.d_s, spec.d_t)
    with np.errstate(over="ignore"):
        h = 1.0 / (1.0 + (d * d / (spec.d_s * spec.d_s)) ** spec.order)
    h[d > spec.d_s] = 0.0
    return frozen(h)


def butterworth(frames: int, height: int, width: int, spec: ButterworthSpec) -> np.ndarray:
    """Filter values of shape ``(T, H, W)`` on the centred frequency grid.

    Inside the cut-off sphere ``D <= d_s`` the response is
    ``1 / (1 + (D^2 / d_s^2)^n)``; outside it is exactly zero. The result
    is cached and read-only.
    """
    if min(frames, height, width) < 1:
        raise ValueError("filter dimensions must be positive")
    return _butterworth_cached(int(frames), int(height), int(width), spec)


def fuse(z_low, z_high, spec: ButterworthSpec, return_residue: bool = False):
    """Low frequencies from ``z_low``, the complement from ``z_high``."""
    z_low = as_tensor4(z_low, "z_low")
    z_high = as_tensor4(z_high, "z_high")
    require_same_shape(z_low, z_high, "fusion inputs")
    f, _, h, w = z_low.shape
    lp = butterworth(f, h, w, spec)[:, None]
    mixed = fft3(z_low) * lp + fft3(z_high) * (1.0 - lp)
    out, residue = ifft3(mixed, return_residue=True)
    log.debug("fuse: max imaginary residue %.3e", residue)
    if return_residue:
        return out, residue
    return out


def dynamic_cutoff(step: float, total_steps: int, alpha_min: float = ALPHA_MIN) -> float:
    """Cut-off after ``step`` completed denoising steps: ``max(1 - s/T, alpha_min)``."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return max(1.0 - step / total_steps, alpha_min)

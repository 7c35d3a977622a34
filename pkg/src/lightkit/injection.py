"""Light-map injection: blend fresh keyed noise into masked latent cells."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .freq_fusion import ButterworthSpec, fuse
from .parallel import chunks, map_ordered
from .tensor import as_tensor4

DEFAULT_OMEGA = 0.8
# cut-off of the fixed low-pass used by the frequency-mode variant
FREQUENCY_MODE_CUTOFF = 0.25


@dataclass(frozen=True)
class InjectionConfig:
    omega: float = DEFAULT_OMEGA
    seed: int = 0
    renormalize_variance: bool = False

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must lie in [0, 1], got {self.omega}")


def _check_masks(latents: np.ndarray, masks) -> np.ndarray:
    masks = as_tensor4(masks, "masks")
    f, _, h, w = latents.shape
    if masks.shape != (f, 1, h, w):
        raise ValueError(f"mask shape {masks.shape} does not match latents {latents.shape} "
                         f"(expected {(f, 1, h, w)})")
    if not np.all((masks == 0.0) | (masks == 1.0)):
        raise ValueError("injection masks must be binary (0 or 1)")
    return masks


def injection_noise(shape, seed: int, frame_offset: int = 0) -> np.ndarray:
    """The noise field that :func:`inject` blends in for ``seed``."""
    return rng.keyed_normal(seed, shape, stream=rng.STREAM_INJECT, frame_offset=frame_offset)


def blend_masked(z: np.ndarray, m: np.ndarray, eps: np.ndarray, cfg: InjectionConfig) -> np.ndarray:
    """The masked blend with an explicit noise field ``eps``."""
    omega = cfg.omega
    blended = omega * eps + (1.0 - omega) * z
    if cfg.renormalize_variance and 0.0 < omega < 1.0:
        blended = blended / math.sqrt(omega * omega + (1.0 - omega) ** 2)
    return np.where(m == 1.0, blended, z)


def _inject_frames(z: np.ndarray, m: np.ndarray, cfg: InjectionConfig, offset: int) -> np.ndarray:
    return blend_masked(z, m, injection_noise(z.shape, cfg.seed, frame_offset=offset), cfg)


def inject(noisy_latents, masks, cfg: InjectionConfig, workers: int = 1) -> np.ndarray:
    """Replace masked cells by ``omega * noise + (1 - omega) * latent``.

    ``masks`` has a single channel and is broadcast over latent channels.
    Cells outside the mask are returned bit-for-bit unchanged. Noise is
    keyed by element position, so the output does not depend on
    ``workers``.
    """
    z = as_tensor4(noisy_latents, "latents")
    m = _check_masks(z, masks)
    if cfg.omega == 0.0:
        return z.copy()
    spans = chunks(z.shape[0], workers)
    parts = map_ordered(lambda i: _inject_frames(z[spans[i][0]:spans[i][1]], m[spans[i][0]:spans[i][1]],
                                                 cfg, spans[i][0]), len(spans), workers)
    return np.concatenate(parts, axis=0)


def inject_frequency_mode(noisy_latents, masks, cfg: InjectionConfig,
                          order: int = 4, cutoff: float = FREQUENCY_MODE_CUTOFF,
                          workers: int = 1) -> np.ndarray:
    """Ablation variant: low frequencies from the injected field, high from the input."""
    z = as_tensor4(noisy_latents, "latents")
    injected = inject(z, masks, cfg, workers=workers)
    return fuse(injected, z, ButterworthSpec(order=order, d_s=cutoff, d_t=cutoff))


def injected_signal(clean, masks, cfg: InjectionConfig, mode: str = "latent") -> np.ndarray:
    """Noise-free part of the injected latents when the input is ``clean`` plus noise.

    Injection is linear in its inputs, so pushing the clean component
    through with a zero noise field isolates it.
    """
    z = as_tensor4(clean, "latents")
    m = _check_masks(z, masks)
    low = blend_masked(z, m, np.zeros_like(z), cfg) if cfg.omega else z.copy()
    if mode == "latent":
        return low
    if mode == "frequency":
        c = FREQUENCY_MODE_CUTOFF
        return fuse(low, z, ButterworthSpec(d_s=c, d_t=c))
    raise ValueError(f"unknown injection mode {mode!r}")

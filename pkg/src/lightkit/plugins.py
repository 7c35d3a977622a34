"""Model backends for the relighting loop and their analytic reference versions.

The loop talks to four roles: a codec (pixels <-> latents), a denoiser
(noisy latent -> clean-latent estimate), a per-frame relighter and a
normal-map source. Real backends live in other processes and are attached
through :mod:`lightkit.bridge`; the classes here are closed-form stand-ins
that keep the control logic testable on a laptop.
"""
from __future__ import annotations

import math
from typing import Optional, Protocol, runtime_checkable

import numpy as np
from scipy import ndimage

from .rng import STREAM_FLICKER, keyed_normal
from .tensor import LUMA_BT601, as_tensor4, resample_area, upsample_nearest

EPS = 1e-3
# nominal albedo luma assumed when the relighter has to estimate lighting
ALBEDO_REF = 0.5


def luma(frame) -> np.ndarray:
    wr, wg, wb = LUMA_BT601
    return wr * frame[0] + wg * frame[1] + wb * frame[2]


class PluginError(RuntimeError):
    """A backend failed; the pipeline re-raises it with step context."""


@runtime_checkable
class Codec(Protocol):
    scale: int

    def encode(self, video: np.ndarray) -> np.ndarray: ...

    def decode(self, latents: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class Denoiser(Protocol):
    def predict_z0(self, z_t: np.ndarray, step: int, light_maps: np.ndarray, prompt: str) -> np.ndarray: ...


@runtime_checkable
class Relighter(Protocol):
    def relight(self, frame: np.ndarray, light_map: np.ndarray, prompt: str, *,
                index: int = 0, step: int = 0) -> np.ndarray: ...


@runtime_checkable
class NormalSource(Protocol):
    def normals(self, video: np.ndarray) -> np.ndarray: ...


class IdentityCodec:
    """Latents are the RGB video area-averaged by ``scale``; decoding repeats cells."""

    def __init__(self, scale: int = 8):
        self.scale = int(scale)

    def encode(self, video):
        return resample_area(video, self.scale)

    def decode(self, latents):
        return upsample_nearest(latents, self.scale)

    # reconstruction is exact for block-constant videos, otherwise lossy
    tolerance = 0.0


class OracleDenoiser:
    """Returns the clean latent it was last given.

    The loop hands it the noise-free part of each step's input (it knows
    every noise draw it made), so ``predict_z0`` is a perfect prediction and
    the rest of the pipeline can be tested without a generative model.
    """

    def __init__(self):
        self._held: Optional[np.ndarray] = None

    def hold(self, clean_latent) -> None:
        self._held = np.array(clean_latent, dtype=np.float64)

    def predict_z0(self, z_t, step, light_maps, prompt):
        if self._held is None:
            raise PluginError("oracle denoiser has no clean latent to return")
        if self._held.shape != np.shape(z_t):
            raise PluginError(f"held latent {self._held.shape} does not match input {np.shape(z_t)}")
        return self._held.copy()


class IdentityRelighter:
    def relight(self, frame, light_map, prompt="", *, index=0, step=0):
        return np.array(frame, dtype=np.float64)


def light_direction(light_map, elevation: float = 0.6) -> np.ndarray:
    """Unit light vector from the intensity centroid of a light map.

    The centroid ``(cx, cy)`` in [0, 1]^2 maps to the hemisphere point
    ``(2cx - 1, 1 - 2cy, elevation)`` (x right, y up, z towards the viewer).
    An empty map gives frontal light.
    """
    m = np.asarray(light_map, dtype=np.float64)
    total = m.sum()
    if total <= 0.0:
        return np.array([0.0, 0.0, 1.0])
    h, w = m.shape
    ys, xs = np.mgrid[0:h, 0:w]
    cx = ((xs + 0.5) * m).sum() / total / w
    cy = ((ys + 0.5) * m).sum() / total / h
    v = np.array([2.0 * cx - 1.0, 1.0 - 2.0 * cy, elevation])
    return v / np.linalg.norm(v)


class LambertianRelighter:
    """Per-frame Lambertian re-shading driven by the light map.

    The commanded lighting is

        S = (ambient + (1 - ambient) * max(0, n.l)) * (base_gain + light_gain * map)

    with ``l`` pointing at the light-map centroid. Like a learned relighter,
    the stand-in does not fully discard the lighting it sees in its input:
    with ``L_in`` the input's lighting (input luma over albedo luma) the
    output is ``albedo * S * (L_in / S)**leak``, where the ratio is divided by
    its geometric mean so that exposure follows ``S`` and only the spatial
    pattern of the input lighting survives. ``leak = 0`` gives pure
    re-shading. Repeated application converges to ``albedo * S`` instead of
    compounding. ``flicker`` adds a per-(step, frame) keyed log-exposure
    jitter, modelling frame-independent sampling.

    Without a known albedo the input is split Retinex-style into a blurred
    luma (lighting) and the remainder (albedo).
    """

    def __init__(self, normals, albedo=None, ambient: float = 0.35, base_gain: float = 0.75,
                 light_gain: float = 1.0, elevation: float = 0.6, leak: float = 0.0,
                 flicker: float = 0.0, seed: int = 0):
        n = np.asarray(normals, dtype=np.float64)
        self.normals = as_tensor4(n[None] if n.ndim == 3 else n, "normals")
        self.albedo = None
        if albedo is not None:
            a = np.asarray(albedo, dtype=np.float64)
            self.albedo = as_tensor4(a[None] if a.ndim == 3 else a, "albedo")
        if not 0.0 <= leak < 1.0:
            raise ValueError(f"leak must lie in [0, 1), got {leak}")
        self.ambient = ambient
        self.base_gain = base_gain
        self.light_gain = light_gain
        self.elevation = elevation
        self.leak = leak
        self.flicker = flicker
        self.seed = seed

    def target_lighting(self, light_map, index: int = 0) -> np.ndarray:
        lm = np.asarray(light_map, dtype=np.float64)
        if lm.ndim == 3:
            lm = lm[0]
        n = self.normals[min(index, self.normals.shape[0] - 1)]
        if n.shape[1:] != lm.shape:
            raise PluginError(f"normal map {n.shape} does not match light map {lm.shape}")
        lam = np.clip(np.tensordot(light_direction(lm, self.elevation), n, axes=1), 0.0, None)
        return (self.ambient + (1.0 - self.ambient) * lam) * (self.base_gain + self.light_gain * lm)

    def _split(self, frame, index):
        """(albedo, input lighting) for one frame."""
        y = np.clip(luma(frame), EPS, None)
        if self.albedo is not None:
            a = self.albedo[min(index, self.albedo.shape[0] - 1)]
            if a.shape != frame.shape:
                raise PluginError(f"albedo {a.shape} does not match frame {frame.shape}")
            return a, y / np.clip(luma(a), EPS, None)
        lighting = ndimage.gaussian_filter(y, sigma=max(1.0, min(y.shape) / 8.0), mode="nearest")
        lighting = lighting / ALBEDO_REF
        return frame / lighting, lighting

    def relight(self, frame, light_map, prompt="", *, index=0, step=0):
        frame = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
        target = self.target_lighting(light_map, index)
        if target.shape != frame.shape[1:]:
            raise PluginError(f"light map {target.shape} does not match frame {frame.shape}")
        albedo, lighting = self._split(frame, index)
        shading = target
        if self.leak:
            # keep part of the input's lighting pattern; exposure follows the target
            log_ratio = np.log(np.clip(lighting, EPS, None)) - np.log(np.clip(target, EPS, None))
            shading = target * np.exp(self.leak * (log_ratio - log_ratio.mean()))
        if self.flicker:
            jitter = keyed_normal(self.seed, (1, 1, 1, 1), stream=STREAM_FLICKER + step, frame_offset=index)
            shading = shading * math.exp(self.flicker * float(jitter[0, 0, 0, 0]))
        return np.clip(albedo * shading, 0.0, 1.0)


class AnalyticNormalSource:
    """Serves known normals (e.g. from :func:`lightkit.scene.sphere_scene`)."""

    def __init__(self, normals):
        self._normals = as_tensor4(normals, "normals")

    def normals(self, video):
        video = as_tensor4(video, "video")
        if self._normals.shape[0] != video.shape[0] or self._normals.shape[2:] != video.shape[2:]:
            raise PluginError(f"normals {self._normals.shape} do not align with video {video.shape}")
        return self._normals.copy()


class FlatNormalSource:
    """Every pixel faces the camera; used when no geometry is known."""

    def normals(self, video):
        video = as_tensor4(video, "video")
        n = np.zeros_like(video[:, :3])
        n[:, 2] = 1.0
        return n

"""The controllable relighting loop.

Outline of :func:`run` for a source video ``V`` and a light trajectory:

1. encode ``V`` and noise it to the starting level;
2. render light maps / masks from the trajectory and inject keyed noise
   into the masked latent cells;
3. for each denoising step ``s``: predict the clean latent, decode it to
   the consistency target, add the one-off detail residual, optionally
   fuse with normal-map latents in the frequency domain, relight each
   frame, blend relit and consistency targets with weight ``lambda_s``,
   re-encode and re-noise for the next step;
4. decode the last fused latent.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from . import rng
from .freq_fusion import ALPHA_MIN, DEFAULT_ORDER, ButterworthSpec, fuse
from .injection import DEFAULT_OMEGA, InjectionConfig, inject, inject_frequency_mode, injected_signal
from .parallel import map_ordered
from .plugins import (
    Codec,
    Denoiser,
    IdentityCodec,
    IdentityRelighter,
    LambertianRelighter,
    NormalSource,
    OracleDenoiser,
    PluginError,
    Relighter,
)
from .scene import encode_normals
from .tensor import NonFiniteError, as_tensor4, check_finite, digest, require_same_shape
from .trajectory import DEFAULT_THRESHOLD, LightMapSequence, TrajectorySpec, build_light_maps

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class StepError(RuntimeError):
    """Failure inside the denoising loop; ``step`` is the offending step index."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class PluginStepError(StepError):
    pass


class NumericStepError(StepError):
    pass


@dataclass
class PipelineConfig:
    T_m: int = 25
    omega: float = DEFAULT_OMEGA
    butterworth_order: int = DEFAULT_ORDER
    alpha_min: float = ALPHA_MIN
    mask_threshold: float = DEFAULT_THRESHOLD
    latent_scale: int = 8
    # signal retention at the first denoising step; rises linearly to 1
    gamma_start: float = 0.3
    signal_schedule: Optional[list] = None
    seed: int = 0
    inject_seed: Optional[int] = None
    codec: str = "identity"
    denoiser: str = "oracle"
    relighter: str = "lambertian"
    normal_source: str = "analytic"
    progressive_fusion_on: bool = True
    geometry_aware: bool = True
    residual_mode: str = "residual"
    injection_mode: str = "latent"
    renormalize_variance: bool = False
    falloff: str = "linear"
    # reference relighter: share of input lighting kept, per-frame exposure jitter
    relight_leak: float = 0.5
    relight_flicker: float = 0.1
    # "fused": last pixel-space fused target; "decoded": decode of the last fused latent
    final_output: str = "fused"
    # command template for plugins whose id is "bridge"
    backend_command: Optional[str] = None
    backend_deadline_s: float = 600.0
    jobs: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if int(self.T_m) != self.T_m or self.T_m < 1:
            raise ConfigError(f"T_m must be a positive integer, got {self.T_m}")
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigError(f"omega must lie in [0, 1], got {self.omega}")
        if self.butterworth_order < 1:
            raise ConfigError("butterworth_order must be >= 1")
        if not 0.0 < self.alpha_min <= 1.0:
            raise ConfigError("alpha_min must lie in (0, 1]")
        if not 0.0 < self.mask_threshold < 1.0:
            raise ConfigError("mask_threshold must lie in (0, 1)")
        if self.latent_scale < 1:
            raise ConfigError("latent_scale must be >= 1")
        if self.residual_mode not in ("residual", "raw_frames"):
            raise ConfigError(f"residual_mode must be 'residual' or 'raw_frames', got {self.residual_mode!r}")
        if not 0.0 <= self.relight_leak < 1.0:
            raise ConfigError(f"relight_leak must lie in [0, 1), got {self.relight_leak}")
        if self.relight_flicker < 0.0:
            raise ConfigError("relight_flicker must be >= 0")
        if self.final_output not in ("fused", "decoded"):
            raise ConfigError(f"final_output must be 'fused' or 'decoded', got {self.final_output!r}")
        if self.injection_mode not in ("latent", "frequency"):
            raise ConfigError(f"injection_mode must be 'latent' or 'frequency', got {self.injection_mode!r}")
        gammas = self.gammas()
        if any(not 0.0 < g <= 1.0 for g in gammas):
            raise ConfigError("signal retention values must lie in (0, 1]")
        if any(b <= a for a, b in zip(gammas, gammas[1:])):
            raise ConfigError("signal retention must strictly increase as denoising proceeds")

    def gammas(self) -> list[float]:
        """Signal retention before each step ``s = 0..T_m`` (the last entry is 1)."""
        if self.signal_schedule is not None:
            g = [float(x) for x in self.signal_schedule]
            if len(g) != self.T_m + 1:
                raise ConfigError(f"signal_schedule needs T_m + 1 = {self.T_m + 1} entries, got {len(g)}")
            return g
        if not 0.0 < self.gamma_start < 1.0:
            raise ConfigError("gamma_start must lie in (0, 1)")
        return [self.gamma_start + (1.0 - self.gamma_start) * s / self.T_m for s in range(self.T_m + 1)]

    @property
    def injection(self) -> InjectionConfig:
        seed = self.seed if self.inject_seed is None else self.inject_seed
        return InjectionConfig(omega=self.omega, seed=seed, renormalize_variance=self.renormalize_variance)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as f:
                return cls.from_dict(json.load(f))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class ScheduleState:
    step: int
    lam: float
    alpha: float
    gamma: float


def fusion_weight(step: int, total_steps: int) -> float:
    """``lambda_s = 1 - s / T_m``: 1 at the first step, 0 after the last."""
    return 1.0 - step / total_steps


def schedule(config: PipelineConfig) -> list[ScheduleState]:
    g = config.gammas()
    out = []
    for s in range(config.T_m + 1):
        lam = fusion_weight(s, config.T_m)
        out.append(ScheduleState(s, lam, max(lam, config.alpha_min), g[s]))
    return out


def forward_noise(shape, seed: int, stream: int) -> np.ndarray:
    return rng.keyed_normal(seed, shape, stream=stream)


def add_noise(z0, gamma: float, seed: int, stream: int = rng.STREAM_FORWARD) -> np.ndarray:
    """``sqrt(gamma) * z0 + sqrt(1 - gamma) * eps`` with position-keyed ``eps``."""
    z0 = as_tensor4(z0, "latents")
    if not 0.0 < gamma <= 1.0:
        raise ConfigError(f"signal retention must lie in (0, 1], got {gamma}")
    if gamma == 1.0:
        return z0.copy()
    eps = forward_noise(z0.shape, seed, stream)
    return math.sqrt(gamma) * z0 + math.sqrt(1.0 - gamma) * eps


def compute_residual(source_video, first_decode) -> np.ndarray:
    """Detail residual ``V_s - I_m``, taken once at the first step."""
    v = as_tensor4(source_video, "source")
    i = as_tensor4(first_decode, "first decode")
    require_same_shape(v, i, "source and first decode")
    return v - i


def progressive_fuse(consistency, relit, lam: float, enabled: bool = True) -> np.ndarray:
    """``(1 - lam) * consistency + lam * relit``; the relit target alone when disabled."""
    consistency = as_tensor4(consistency, "consistency target")
    relit = as_tensor4(relit, "relit target")
    require_same_shape(consistency, relit, "fusion targets")
    if not enabled or lam == 1.0:
        return relit.copy()
    if lam == 0.0:
        return consistency.copy()
    return (1.0 - lam) * consistency + lam * relit


@dataclass
class Plugins:
    codec: Codec
    denoiser: Denoiser
    normal_source: NormalSource
    relighter: Optional[Relighter] = None
    relighter_factory: Optional[Callable[[np.ndarray], Relighter]] = None


def reference_plugins(config: PipelineConfig, normal_source: NormalSource, albedo=None) -> Plugins:
    """Resolve the built-in plugin ids of ``config``.

    ``albedo`` (when known, e.g. for synthetic scenes) is handed to the
    Lambertian relighter; otherwise it estimates albedo from its input.
    """
    if config.codec != "identity":
        raise ConfigError(f"unknown codec {config.codec!r}")
    if config.denoiser != "oracle":
        raise ConfigError(f"unknown denoiser {config.denoiser!r}")
    if config.relighter == "lambertian":
        def factory(normals):
            return LambertianRelighter(normals, albedo=albedo, leak=config.relight_leak,
                                       flicker=config.relight_flicker, seed=config.seed)
        return Plugins(IdentityCodec(config.latent_scale), OracleDenoiser(), normal_source,
                       relighter_factory=factory)
    if config.relighter == "identity":
        return Plugins(IdentityCodec(config.latent_scale), OracleDenoiser(), normal_source,
                       relighter=IdentityRelighter())
    raise ConfigError(f"unknown relighter {config.relighter!r}")


@dataclass
class RunResult:
    video: np.ndarray
    light_maps: LightMapSequence
    residual: Optional[np.ndarray]
    diagnostics: list[dict] = field(default_factory=list)
    stage_hashes: dict = field(default_factory=dict)


def _call(at: Optional[int], role: str, fn, /, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (PluginError, OSError, RuntimeError, ValueError) as exc:
        where = "setup" if at is None else f"step {at}"
        raise PluginStepError(f"{where}: {role} failed: {exc}", at) from exc


def _finite(x: np.ndarray, what: str, step: Optional[int]) -> np.ndarray:
    try:
        return check_finite(x, what)
    except NonFiniteError as exc:
        where = "setup" if step is None else f"step {step}"
        raise NumericStepError(f"{where}: {exc}", step) from exc


def run(config: PipelineConfig, source_video, trajectory: TrajectorySpec, prompt: str = "",
        plugins: Optional[Plugins] = None, normal_source: Optional[NormalSource] = None,
        albedo=None) -> RunResult:
    """Relight ``source_video`` (``(F, 3, H, W)`` in [0, 1]) along ``trajectory``."""
    config.validate()
    video = as_tensor4(source_video, "source video")
    f, c, h, w = video.shape
    if c != 3:
        raise ConfigError(f"source video must have 3 channels, got {c}")
    if trajectory.frame_count != f:
        raise ConfigError(f"trajectory has {trajectory.frame_count} frames, video has {f}")
    if plugins is None:
        if normal_source is None:
            raise ConfigError("reference plugins need a normal source")
        plugins = reference_plugins(config, normal_source, albedo)
    scale = getattr(plugins.codec, "scale", config.latent_scale)
    if h % scale or w % scale:
        raise ConfigError(f"video size {h}x{w} not divisible by latent scale {scale}")
    jobs = max(1, int(config.jobs))
    sched = schedule(config)
    hashes: dict[str, str] = {}

    lm = build_light_maps(trajectory, h, w, scale, config.mask_threshold, config.falloff)
    hashes["light_maps"] = digest(lm.maps)

    z0 = _finite(_call(None, "codec.encode", plugins.codec.encode, video), "encoded source", None)
    if lm.masks_latent.shape != (f, 1) + z0.shape[2:]:
        raise ConfigError(f"latent masks {lm.masks_latent.shape} do not match latents {z0.shape}")
    gamma0 = sched[0].gamma
    z_hat = add_noise(z0, gamma0, config.seed)
    hashes["noisy_latents"] = digest(z_hat)

    inj = config.injection
    if config.injection_mode == "latent":
        z_t = inject(z_hat, lm.masks_latent, inj, workers=jobs)
    else:
        z_t = inject_frequency_mode(z_hat, lm.masks_latent, inj, order=config.butterworth_order, workers=jobs)
    clean = injected_signal(math.sqrt(gamma0) * z0, lm.masks_latent, inj, config.injection_mode)
    clean = clean / math.sqrt(gamma0)
    hashes["injected_latents"] = digest(z_t)

    normals = _call(None, "normal_source", plugins.normal_source.normals, video)
    z_normal = None
    if config.geometry_aware:
        z_normal = _call(None, "codec.encode", plugins.codec.encode, encode_normals(normals))
        hashes["normal_latents"] = digest(z_normal)
    relighter = plugins.relighter
    if relighter is None:
        relighter = plugins.relighter_factory(normals)

    residual = None
    diagnostics = []
    z_bar = None
    for st in sched[:-1]:
        s = st.step
        t0 = time.perf_counter()
        if hasattr(plugins.denoiser, "hold"):
            plugins.denoiser.hold(clean)
        z_pred = _call(s, "denoiser", plugins.denoiser.predict_z0, z_t, s, lm.maps, prompt)
        _finite(z_pred, "predicted latent", s)
        consistency = _call(s, "codec.decode", plugins.codec.decode, z_pred)

        if config.residual_mode == "residual":
            if residual is None:
                residual = compute_residual(video, consistency)
                hashes["residual"] = digest(residual)
            base = consistency + residual
        else:
            base = video

        residue = 0.0
        if config.geometry_aware:
            z_rgb = _call(s, "codec.encode", plugins.codec.encode, base)
            spec = ButterworthSpec.from_cutoff(st.alpha, config.butterworth_order)
            z_tilde, residue = fuse(z_normal, z_rgb, spec, return_residue=True)
            relight_in = _call(s, "codec.decode", plugins.codec.decode, z_tilde)
        else:
            relight_in = base

        relit = np.stack(map_ordered(
            lambda k: _call(s, "relighter", relighter.relight, relight_in[k], lm.maps[k, 0], prompt,
                                index=k, step=s),
            f, jobs))
        _finite(relit, "relit frames", s)
        fused = progressive_fuse(consistency, relit, st.lam, config.progressive_fusion_on)
        z_bar = _finite(_call(s, "codec.encode", plugins.codec.encode, fused), "fused latent", s)

        nxt = sched[s + 1]
        clean = z_bar
        z_t = add_noise(z_bar, nxt.gamma, config.seed, stream=rng.STREAM_RENOISE + s)
        diagnostics.append({
            "step": s,
            "lambda": st.lam,
            "alpha": st.alpha,
            "gamma": st.gamma,
            "imag_residue": residue,
            "seconds": time.perf_counter() - t0,
            "hash_relight_input": digest(relight_in),
            "hash_fused": digest(fused),
        })
        log.debug("step %d: lambda=%.3f alpha=%.3f residue=%.2e", s, st.lam, st.alpha, residue)

    if config.final_output == "decoded":
        out = _call(config.T_m, "codec.decode", plugins.codec.decode, z_bar)
    else:
        out = fused
    out = _finite(np.clip(out, 0.0, 1.0), "output video", config.T_m)
    hashes["output"] = digest(out)
    return RunResult(out, lm, residual, diagnostics, hashes)

"""Trajectory-controlled video relighting.

Light maps from moving light sources, keyed noise injection into video
latents, frequency-domain fusion with normal-map latents, a progressive
relighting loop with pluggable backends, and controllability metrics.
"""
__version__ = "0.1.0"

from .freq_fusion import ButterworthSpec, butterworth, dynamic_cutoff, fft3, fuse, ifft3  # noqa: E402
from .injection import InjectionConfig, inject  # noqa: E402
from .metrics import psnr, psnr_light, psnr_y, temporal_consistency  # noqa: E402
from .pipeline import PipelineConfig, run  # noqa: E402
from .tensor import load_tensor, save_tensor  # noqa: E402
from .trajectory import TrajectorySpec, build_light_maps, linear_sweep  # noqa: E402

__all__ = [
    "ButterworthSpec",
    "InjectionConfig",
    "PipelineConfig",
    "TrajectorySpec",
    "build_light_maps",
    "butterworth",
    "dynamic_cutoff",
    "fft3",
    "fuse",
    "ifft3",
    "inject",
    "linear_sweep",
    "load_tensor",
    "psnr",
    "psnr_light",
    "psnr_y",
    "run",
    "save_tensor",
    "temporal_consistency",
]

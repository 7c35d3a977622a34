"""Synthetic test scene: a shaded sphere in front of a ground plane.

The scene has exact per-pixel normals and albedo, so relighting results can
be checked against known geometry. Optional baked-in source lighting from
the left reproduces the light-leakage situation that geometry-aware
relighting is meant to suppress.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPHERE_ALBEDO = (0.80, 0.52, 0.38)
GROUND_ALBEDO = (0.42, 0.50, 0.36)
WALL_ALBEDO = (0.46, 0.46, 0.52)
HORIZON = 0.62
SOURCE_AMBIENT = 0.45


@dataclass
class Scene:
    video: np.ndarray  # (F, 3, H, W) source frames in [0, 1]
    normals: np.ndarray  # (F, 3, H, W) unit normals, x right / y up / z to viewer
    albedo: np.ndarray  # (F, 3, H, W)
    sphere_mask: np.ndarray  # (H, W) bool
    bake_light: str

    @property
    def normal_video(self) -> np.ndarray:
        """Normals packed into RGB as ``(n + 1) / 2``."""
        return encode_normals(self.normals)


def encode_normals(normals) -> np.ndarray:
    return np.clip((np.asarray(normals) + 1.0) * 0.5, 0.0, 1.0)


def _geometry(height: int, width: int, cx: float):
    ys, xs = np.mgrid[0:height, 0:width]
    u = (xs + 0.5) / width
    v = (ys + 0.5) / height
    r = 0.26 * min(height, width)
    cy = 0.47 * height
    dx = ((xs + 0.5) - cx * width) / r
    dy = ((ys + 0.5) - cy) / r
    rho2 = dx * dx + dy * dy
    on_sphere = rho2 < 1.0

    normals = np.zeros((3, height, width))
    ground = v >= HORIZON
    # ground tilted towards the camera, wall facing it
    normals[:, ground] = np.array([0.0, 0.8, 0.6])[:, None]
    normals[:, ~ground] = np.array([0.0, 0.0, 1.0])[:, None]
    nz = np.sqrt(np.clip(1.0 - rho2, 0.0, 1.0))
    normals[0][on_sphere] = dx[on_sphere]
    normals[1][on_sphere] = -dy[on_sphere]
    normals[2][on_sphere] = nz[on_sphere]

    albedo = np.empty((3, height, width))
    albedo[:, ground] = np.array(GROUND_ALBEDO)[:, None]
    albedo[:, ~ground] = np.array(WALL_ALBEDO)[:, None]
    # fine checker texture on the ground gives the codec something to lose
    checker = ((xs // 4 + ys // 4) % 2 == 0) & ground
    albedo[:, checker] *= 0.82
    albedo[:, on_sphere] = np.array(SPHERE_ALBEDO)[:, None]
    return normals, albedo, on_sphere, u


def _source_shading(normals: np.ndarray, u: np.ndarray, bake_light: str) -> np.ndarray:
    if bake_light == "none":
        light = np.array([0.0, 0.3, 1.0])
        light /= np.linalg.norm(light)
        lam = np.clip(np.tensordot(light, normals, axes=1), 0.0, 1.0)
        return 0.55 + 0.35 * lam
    if bake_light == "left":
        light = np.array([-0.85, 0.25, 0.45])
        light /= np.linalg.norm(light)
        lam = np.clip(np.tensordot(light, normals, axes=1), 0.0, 1.0)
        # warm lamp just off the left edge
        spill = np.exp(-((u / 0.35) ** 2))
        return SOURCE_AMBIENT + 0.55 * lam + 0.45 * spill
    raise ValueError(f"unknown bake_light {bake_light!r} (expected 'left' or 'none')")


def sphere_scene(frames: int = 16, height: int = 64, width: int = 64, bake_light: str = "none",
                 drift: float = 0.0) -> Scene:
    """Render the scene; ``drift`` moves the sphere horizontally over the clip."""
    if frames < 1 or height < 4 or width < 4:
        raise ValueError("scene needs >= 1 frame and >= 4x4 pixels")
    video, normals, albedo = [], [], []
    mask = None
    for k in range(frames):
        u_k = 0.0 if frames == 1 else k / (frames - 1)
        n, a, on_sphere, u = _geometry(height, width, 0.5 + drift * (u_k - 0.5))
        shading = _source_shading(n, u, bake_light)
        video.append(np.clip(a * shading, 0.0, 1.0))
        normals.append(n)
        albedo.append(a)
        if mask is None:
            mask = on_sphere
    return Scene(np.stack(video), np.stack(normals), np.stack(albedo), mask, bake_light)

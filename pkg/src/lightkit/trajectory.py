"""Light trajectories: per-frame source states, light maps and masks.

Coordinates are normalised to the unit square with ``(0, 0)`` at the
top-left image corner and ``x`` running along the width. A pixel at row
``i``, column ``j`` has its centre at ``((j + 0.5) / W, (i + 0.5) / H)``,
so maps rendered at different resolutions stay aligned under area
resampling.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .tensor import resample_area

Point = tuple[float, float]

DEFAULT_THRESHOLD = 0.3
LATENT_COVERAGE = 0.5
# exp(-4.5 d^2): the radius sits at three standard deviations
GAUSSIAN_SHARPNESS = 4.5


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class Linear:
    start: Point
    end: Point

    def at(self, u: float) -> Point:
        (x0, y0), (x1, y1) = self.start, self.end
        return (x0 + u * (x1 - x0), y0 + u * (y1 - y0))


@dataclass(frozen=True)
class Circular:
    center: Point
    orbit_radius: float
    start_angle: float
    end_angle: float

    def at(self, u: float) -> Point:
        theta = self.start_angle + u * (self.end_angle - self.start_angle)
        cx, cy = self.center
        return (cx + self.orbit_radius * math.cos(theta), cy + self.orbit_radius * math.sin(theta))


@dataclass(frozen=True)
class Polyline:
    waypoints: tuple[Point, ...]

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise TrajectoryError("polyline needs at least two waypoints")

    def at(self, u: float) -> Point:
        pts = np.asarray(self.waypoints, dtype=np.float64)
        seg = np.hypot(*np.diff(pts, axis=0).T)
        total = float(seg.sum())
        if total == 0.0 or u <= 0.0:
            return tuple(map(float, pts[0]))
        if u >= 1.0:
            return tuple(map(float, pts[-1]))
        target = u * total
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        k = int(np.searchsorted(cum, target, side="right") - 1)
        k = min(k, len(seg) - 1)
        t = (target - cum[k]) / seg[k] if seg[k] > 0 else 0.0
        p = pts[k] + t * (pts[k + 1] - pts[k])
        return (float(p[0]), float(p[1]))


Pattern = Linear | Circular | Polyline


@dataclass(frozen=True)
class SourceTrack:
    pattern: Pattern
    radius_start: float
    radius_end: float
    intensity: float = 1.0

    def __post_init__(self):
        for r in (self.radius_start, self.radius_end):
            if not 0.0 < r <= 1.0:
                raise TrajectoryError(f"radius must lie in (0, 1], got {r}")
        if not 0.0 <= self.intensity <= 1.0:
            raise TrajectoryError(f"intensity must lie in [0, 1], got {self.intensity}")


@dataclass(frozen=True)
class TrajectorySpec:
    sources: tuple[SourceTrack, ...]
    frame_count: int

    def __post_init__(self):
        if not self.sources:
            raise TrajectoryError("trajectory needs at least one source")
        if self.frame_count < 1:
            raise TrajectoryError("frame_count must be >= 1")


@dataclass(frozen=True)
class SourceState:
    center: Point
    radius: float
    intensity: float


@dataclass
class LightMapSequence:
    maps: np.ndarray  # (F, 1, H, W) in [0, 1]
    masks_pixel: np.ndarray  # (F, 1, H, W) in {0, 1}
    masks_latent: np.ndarray  # (F, 1, H/s, W/s) in {0, 1}
    states: list[list[SourceState]] = field(default_factory=list)


def progress(k: int, n: int) -> float:
    return 0.0 if n == 1 else k / (n - 1)


def interpolate(spec: TrajectorySpec) -> list[list[SourceState]]:
    """Per-frame list of source states, linear in position and radius."""
    frames = []
    for k in range(spec.frame_count):
        u = progress(k, spec.frame_count)
        frames.append([
            SourceState(
                center=src.pattern.at(u),
                radius=src.radius_start + u * (src.radius_end - src.radius_start),
                intensity=src.intensity,
            )
            for src in spec.sources
        ])
    return frames


def falloff(d, profile: Literal["linear", "gaussian"] = "linear"):
    d = np.asarray(d, dtype=np.float64)
    if profile == "linear":
        return np.clip(1.0 - d, 0.0, 1.0)
    if profile == "gaussian":
        return np.where(d <= 1.0, np.exp(-GAUSSIAN_SHARPNESS * d * d), 0.0)
    raise TrajectoryError(f"unknown falloff profile {profile!r}")


def rasterize(states: Sequence[SourceState], height: int, width: int,
              profile: str = "linear") -> np.ndarray:
    """Render one ``(H, W)`` light map; overlapping sources combine by max."""
    if height < 1 or width < 1:
        raise TrajectoryError("image size must be positive")
    ys = (np.arange(height) + 0.5)[:, None]
    xs = (np.arange(width) + 0.5)[None, :]
    out = np.zeros((height, width))
    scale = min(height, width)
    for st in states:
        cx, cy = st.center[0] * width, st.center[1] * height
        d = np.hypot(xs - cx, ys - cy) / (st.radius * scale)
        np.maximum(out, st.intensity * falloff(d, profile), out=out)
    return out


def binarize(maps, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise TrajectoryError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(maps) >= threshold).astype(np.float64)


def latent_masks(masks_pixel, scale: int) -> np.ndarray:
    """A latent cell is on when at least half of its pixel block is on."""
    coverage = resample_area(masks_pixel, scale)
    return (coverage >= LATENT_COVERAGE).astype(np.float64)


def build_light_maps(spec: TrajectorySpec, height: int, width: int, latent_scale: int = 8,
                     threshold: float = DEFAULT_THRESHOLD, profile: str = "linear") -> LightMapSequence:
    states = interpolate(spec)
    maps = np.stack([rasterize(s, height, width, profile) for s in states])[:, None]
    masks = binarize(maps, threshold)
    return LightMapSequence(maps=maps, masks_pixel=masks,
                            masks_latent=latent_masks(masks, latent_scale), states=states)


# -- JSON --------------------------------------------------------------------

def _point(v) -> Point:
    x, y = (float(c) for c in v)
    return (x, y)


def _pattern_from_dict(d: dict) -> Pattern:
    kind = d.get("pattern")
    if kind == "linear":
        return Linear(_point(d["start"]), _point(d["end"]))
    if kind == "circular":
        angles = d.get("angles", [d.get("start_angle", 0.0), d.get("end_angle", 2 * math.pi)])
        return Circular(_point(d["center"]), float(d["orbit_radius"]), float(angles[0]), float(angles[1]))
    if kind == "polyline":
        return Polyline(tuple(_point(p) for p in d["waypoints"]))
    raise TrajectoryError(f"unknown pattern {kind!r}")


def spec_from_dict(d: dict) -> TrajectorySpec:
    try:
        sources = []
        for s in d["sources"]:
            r = s.get("radius", 0.15)
            r0, r1 = (float(r), float(r)) if isinstance(r, (int, float)) else (float(r[0]), float(r[1]))
            sources.append(SourceTrack(_pattern_from_dict(s), r0, r1, float(s.get("intensity", 1.0))))
        return TrajectorySpec(tuple(sources), int(d["frames"]))
    except (KeyError, TypeError, IndexError) as exc:
        raise TrajectoryError(f"malformed trajectory description: {exc!r}") from exc


def spec_to_dict(spec: TrajectorySpec) -> dict:
    sources = []
    for s in spec.sources:
        p = s.pattern
        if isinstance(p, Linear):
            d = {"pattern": "linear", "start": list(p.start), "end": list(p.end)}
        elif isinstance(p, Circular):
            d = {"pattern": "circular", "center": list(p.center), "orbit_radius": p.orbit_radius,
                 "angles": [p.start_angle, p.end_angle]}
        else:
            d = {"pattern": "polyline", "waypoints": [list(w) for w in p.waypoints]}
        d.update(radius=[s.radius_start, s.radius_end], intensity=s.intensity)
        sources.append(d)
    return {"frames": spec.frame_count, "sources": sources}


def load_spec(path) -> TrajectorySpec:
    with open(Path(path), encoding="utf-8") as f:
        return spec_from_dict(json.load(f))


def linear_sweep(frames: int, start: Point = (0.15, 0.5), end: Point = (0.85, 0.5),
                 radius: float = 0.2, intensity: float = 1.0) -> TrajectorySpec:
    """Single source moving in a straight line at constant radius."""
    return TrajectorySpec((SourceTrack(Linear(start, end), radius, radius, intensity),), frames)

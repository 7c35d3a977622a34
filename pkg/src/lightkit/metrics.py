"""Controllability and consistency metrics for relit videos.

All videos are ``(F, C, H, W)`` arrays with peak value 1.0.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensor import LUMA_BT601, as_tensor4, require_same_shape, video_luminance
from .trajectory import SourceState

PSNR_CAP = 99.0
TOP_FRACTION = 0.10


def psnr(a, b, mask=None) -> float:
    """Peak signal-to-noise ratio in dB, optionally restricted to ``mask``.

    ``mask`` may have a single channel; it is broadcast over channels.
    Identical signals return the 99 dB cap.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    require_same_shape(a, b, "psnr inputs")
    sq = (a - b) ** 2
    if mask is None:
        mse = float(sq.mean())
    else:
        sel = np.broadcast_to(np.asarray(mask) > 0.5, sq.shape)
        if not sel.any():
            raise ValueError("psnr mask selects no pixels")
        mse = float(sq[sel].mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def psnr_y(result_video, pixel_masks, weights=LUMA_BT601) -> float:
    """Luma PSNR against pure white inside the light masks.

    Frames whose mask is empty are skipped; the rest are averaged.
    """
    y = video_luminance(result_video, weights)
    masks = as_tensor4(pixel_masks, "masks")
    if masks.shape != y.shape:
        raise ValueError(f"mask shape {masks.shape} does not match luminance {y.shape}")
    scores = [psnr(y[k], np.ones_like(y[k]), masks[k]) for k in range(y.shape[0]) if masks[k].any()]
    if not scores:
        raise ValueError("all light masks are empty")
    return float(np.mean(scores))


def light_overlay(source_video, light_maps, gain: float = 1.0, mode: str = "add") -> np.ndarray:
    src = as_tensor4(source_video, "source")
    maps = as_tensor4(light_maps, "light maps")
    if maps.shape[0] != src.shape[0] or maps.shape[2:] != src.shape[2:]:
        raise ValueError(f"light maps {maps.shape} do not align with video {src.shape}")
    if mode == "add":
        return np.clip(src + gain * maps, 0.0, 1.0)
    if mode == "alpha":
        a = np.clip(gain * maps, 0.0, 1.0)
        return (1.0 - a) * src + a
    raise ValueError(f"unknown overlay mode {mode!r}")


def psnr_light(result_video, source_video, light_maps, gain: float = 1.0, mode: str = "add") -> float:
    """Full-frame PSNR between the result and the source with the light map overlaid."""
    result = as_tensor4(result_video, "result")
    overlay = light_overlay(source_video, light_maps, gain, mode)
    require_same_shape(result, overlay, "result and overlay")
    return psnr(result, overlay)


def temporal_consistency(video) -> float:
    """Mean PSNR between consecutive frames."""
    v = as_tensor4(video, "video")
    if v.shape[0] < 2:
        raise ValueError("temporal consistency needs at least two frames")
    return float(np.mean([psnr(v[k], v[k + 1]) for k in range(v.shape[0] - 1)]))


def bright_centroid(frame_luma, top_fraction: float = TOP_FRACTION) -> Optional[tuple[float, float]]:
    """Luma-weighted centroid of the brightest pixels, in normalised ``(x, y)``.

    Pixels at or above the ``1 - top_fraction`` quantile take part. Returns
    ``None`` for an all-black frame.
    """
    y = np.asarray(frame_luma, dtype=np.float64)
    h, w = y.shape
    thr = np.quantile(y, 1.0 - top_fraction)
    wts = np.where(y >= thr, y, 0.0)
    total = wts.sum()
    if total <= 0.0:
        return None
    ys, xs = np.mgrid[0:h, 0:w]
    cx = float(((xs + 0.5) * wts).sum() / total) / w
    cy = float(((ys + 0.5) * wts).sum() / total) / h
    return (cx, cy)


def centroid_track(video, weights=LUMA_BT601) -> list[Optional[tuple[float, float]]]:
    y = video_luminance(video, weights)
    return [bright_centroid(y[k, 0]) for k in range(y.shape[0])]


def centroid_track_error(video, states: Sequence[Sequence[SourceState]]) -> tuple[float, list[Optional[float]]]:
    """Mean distance from the bright centroid to the nearest commanded light centre.

    Distances are measured in pixels and divided by the frame width. Returns
    the mean over defined frames and the per-frame values (``None`` for
    all-black frames).
    """
    v = as_tensor4(video, "video")
    _, _, h, w = v.shape
    if len(states) != v.shape[0]:
        raise ValueError(f"trajectory has {len(states)} frames, video has {v.shape[0]}")
    per_frame: list[Optional[float]] = []
    for c, frame_states in zip(centroid_track(v), states):
        if c is None:
            per_frame.append(None)
            continue
        d = min(math.hypot((c[0] - s.center[0]) * w, (c[1] - s.center[1]) * h) for s in frame_states)
        per_frame.append(d / w)
    defined = [e for e in per_frame if e is not None]
    if not defined:
        raise ValueError("every frame is black; centroid error undefined")
    return float(np.mean(defined)), per_frame


@dataclass
class MetricReport:
    psnr_y: float
    psnr_light: float
    temporal_consistency: float
    centroid_track_error: float
    per_frame: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(result_video, source_video, light_maps, pixel_masks, states,
             overlay_gain: float = 1.0, overlay_mode: str = "add") -> MetricReport:
    result = as_tensor4(result_video, "result")
    y = video_luminance(result)
    masks = as_tensor4(pixel_masks, "masks")
    per_y = [psnr(y[k], np.ones_like(y[k]), masks[k]) if masks[k].any() else None
             for k in range(y.shape[0])]
    overlay = light_overlay(source_video, light_maps, overlay_gain, overlay_mode)
    per_light = [psnr(result[k], overlay[k]) for k in range(result.shape[0])]
    err, per_err = centroid_track_error(result, states)
    centroids = centroid_track(result)
    return MetricReport(
        psnr_y=psnr_y(result, masks),
        psnr_light=psnr_light(result, source_video, light_maps, overlay_gain, overlay_mode),
        temporal_consistency=temporal_consistency(result) if result.shape[0] > 1 else PSNR_CAP,
        centroid_track_error=err,
        per_frame={
            "psnr_y": per_y,
            "psnr_light": per_light,
            "centroid_error": per_err,
            "centroid": [list(c) if c else None for c in centroids],
        },
    )

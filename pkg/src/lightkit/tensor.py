"""Dense 4-D video/latent tensors.

Tensors are plain :class:`numpy.ndarray` objects of shape
``(frames, channels, height, width)``. Helpers here validate that shape,
convert colour to luminance, resample between pixel and latent grids and
move tensors to and from disk (LCTK v1 binary files, PPM frame folders).
"""
from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np
from PIL import Image as PILImage

MAGIC = b"LCTK"
VERSION = 1
DTYPE_F32LE = 1
HEADER = struct.Struct("<4sIII4Q")  # magic, version, dtype, ndim, dims
MAX_ELEMENTS = 1 << 40

LUMA_BT601 = (0.299, 0.587, 0.114)
LUMA_BT709 = (0.2126, 0.7152, 0.0722)

FRAME_PATTERN = "frame_{:04d}.ppm"

PathOrFile = Union[str, os.PathLike, BinaryIO]


class LCTKError(ValueError):
    """Base class for tensor-file errors; ``code`` identifies the failure."""

    code = "lctk_error"


class BadMagic(LCTKError):
    code = "bad_magic"


class UnsupportedHeader(LCTKError):
    code = "unsupported_header"


class DimensionOverflow(LCTKError):
    code = "dimension_overflow"


class TruncatedPayload(LCTKError):
    code = "truncated_payload"


class NonFiniteError(FloatingPointError):
    """A tensor holds NaN or Inf where finite values are required."""


def as_tensor4(x, name: str = "tensor", dtype=np.float64) -> np.ndarray:
    """Return ``x`` as a 4-D array, raising ``ValueError`` on bad shape."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 4:
        raise ValueError(f"{name} must be 4-D (frames, channels, height, width), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {arr.shape}")
    return arr


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NonFiniteError(f"{what} contains {bad} non-finite values")
    return x


def require_same_shape(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch between {what}: {a.shape} vs {b.shape}")


def frozen(x: np.ndarray) -> np.ndarray:
    """Mark an array read-only so shared results cannot be mutated."""
    x.setflags(write=False)
    return x


# -- serialization -----------------------------------------------------------

def _open(target: PathOrFile, mode: str):
    if hasattr(target, "read") or hasattr(target, "write"):
        return _NoClose(target)
    return open(target, mode)


class _NoClose:
    def __init__(self, f):
        self.f = f

    def __enter__(self):
        return self.f

    def __exit__(self, *exc):
        return False


def tensor_to_bytes(t) -> bytes:
    arr = as_tensor4(t, dtype=np.float32)
    check_finite(arr)
    header = HEADER.pack(MAGIC, VERSION, DTYPE_F32LE, 4, *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {bytes(buf[:4])!r}")
    if len(buf) < HEADER.size:
        raise TruncatedPayload(f"header needs {HEADER.size} bytes, file has {len(buf)}")
    _, version, dtype, ndim, *dims = HEADER.unpack_from(buf)
    if version != VERSION:
        raise UnsupportedHeader(f"unsupported LCTK version {version}")
    if dtype != DTYPE_F32LE:
        raise UnsupportedHeader(f"unsupported dtype code {dtype}")
    if ndim != 4:
        raise UnsupportedHeader(f"expected ndim 4, got {ndim}")
    if min(dims) < 1:
        raise UnsupportedHeader(f"zero-length dimension in {tuple(dims)}")
    count = 1
    for d in dims:
        count *= d
        if count > MAX_ELEMENTS:
            raise DimensionOverflow(f"dimensions {tuple(dims)} exceed {MAX_ELEMENTS} elements")
    need = HEADER.size + 4 * count
    if len(buf) < need:
        raise TruncatedPayload(f"payload needs {need} bytes, file has {len(buf)}")
    if len(buf) > need:
        raise LCTKError(f"{len(buf) - need} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=HEADER.size)
    return data.astype(np.float32).reshape(dims)


def save_tensor(t, destination: PathOrFile) -> None:
    """Write ``t`` as an LCTK v1 file (float32, little-endian, row-major)."""
    payload = tensor_to_bytes(t)
    with _open(destination, "wb") as f:
        f.write(payload)


def load_tensor(source: PathOrFile) -> np.ndarray:
    with _open(source, "rb") as f:
        buf = f.read()
    return tensor_from_bytes(buf)


# -- colour ------------------------------------------------------------------

def to_luminance(img, weights=LUMA_BT601) -> np.ndarray:
    """Luma of an ``(H, W, 3)`` RGB image with values in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    wr, wg, wb = weights
    return wr * img[..., 0] + wg * img[..., 1] + wb * img[..., 2]


def video_luminance(video, weights=LUMA_BT601) -> np.ndarray:
    """Per-pixel luma of a video, shape ``(F, 1, H, W)``.

    Single-channel input is treated as already being luminance.
    """
    v = as_tensor4(video, "video")
    if v.shape[1] == 1:
        return v.copy()
    if v.shape[1] != 3:
        raise ValueError(f"luminance needs 1 or 3 channels, got {v.shape[1]}")
    wr, wg, wb = weights
    return (wr * v[:, 0] + wg * v[:, 1] + wb * v[:, 2])[:, None]


# -- resampling --------------------------------------------------------------

def resample_area(t, scale: int) -> np.ndarray:
    """Average non-overlapping ``scale x scale`` blocks of every slice."""
    t = as_tensor4(t)
    if int(scale) != scale or scale < 1:
        raise ValueError(f"scale must be a positive integer, got {scale!r}")
    f, c, h, w = t.shape
    if h % scale or w % scale:
        raise ValueError(f"spatial size {h}x{w} not divisible by scale {scale}")
    if scale == 1:
        return t.copy()
    return t.reshape(f, c, h // scale, scale, w // scale, scale).mean(axis=(3, 5))


def upsample_nearest(t, scale: int) -> np.ndarray:
    t = as_tensor4(t)
    if scale == 1:
        return t.copy()
    return np.repeat(np.repeat(t, scale, axis=2), scale, axis=3)


def lerp(a, b, w: float) -> np.ndarray:
    """Elementwise ``(1 - w) * a + w * b``; exact at both endpoints."""
    a = as_tensor4(a, "a")
    b = as_tensor4(b, "b")
    require_same_shape(a, b, "lerp operands")
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"blend weight must lie in [0, 1], got {w}")
    if w == 0.0:
        return a.copy()
    if w == 1.0:
        return b.copy()
    return (1.0 - w) * a + w * b


# -- PPM frame folders -------------------------------------------------------

def quantize8(x) -> np.ndarray:
    """Clamp to [0, 1] and round to the nearest 8-bit level."""
    return np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, frame) -> None:
    """Write one ``(C, H, W)`` frame (C = 1 or 3) as binary PPM."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[0] == 1:
        frame = np.repeat(frame, 3, axis=0)
    rgb = quantize8(np.transpose(frame, (1, 2, 0)))
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    with PILImage.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.transpose(rgb, (2, 0, 1))


def save_frames(directory, video) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    video = as_tensor4(video, "video")
    paths = []
    for k, frame in enumerate(video):
        p = directory / FRAME_PATTERN.format(k)
        write_ppm(p, frame)
        paths.append(p)
    return paths


def load_frames(directory) -> np.ndarray:
    directory = Path(directory)
    paths = sorted(directory.glob("frame_*.ppm"))
    if not paths:
        raise FileNotFoundError(f"no frame_*.ppm files in {directory}")
    return np.stack([read_ppm(p) for p in paths])


def digest(t) -> str:
    """SHA-256 over shape and float64 bytes; used for stage fingerprints."""
    arr = np.ascontiguousarray(t, dtype=np.float64)
    h = hashlib.sha256(repr(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


__all__ = [
    "BadMagic",
    "DimensionOverflow",
    "LCTKError",
    "NonFiniteError",
    "TruncatedPayload",
    "UnsupportedHeader",
    "as_tensor4",
    "check_finite",
    "lerp",
    "load_frames",
    "load_tensor",
    "resample_area",
    "save_frames",
    "save_tensor",
    "to_luminance",
    "upsample_nearest",
    "video_luminance",
]

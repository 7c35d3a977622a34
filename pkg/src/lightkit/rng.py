"""Position-keyed Gaussian noise from the Philox4x32-10 counter-based generator.

Every tensor element gets its own counter built from its coordinates, so any
subset of a noise field (one frame, one channel, one pixel) can be
regenerated independently and in any order with bit-identical results.

Counter layout for element ``(frame, channel, row, col)`` in ``stream``::

    c0 = col, c1 = row, c2 = frame, c3 = (stream << 12) | channel

The 64-bit seed supplies the two key words (low word first). The four
output words give two 53-bit uniforms in (0, 1), which Box-Muller turns
into one standard normal (cosine branch).
"""
from __future__ import annotations

import numpy as np

PHILOX_M0 = 0xD2511F53
PHILOX_M1 = 0xCD9E8D57
PHILOX_W0 = 0x9E3779B9
PHILOX_W1 = 0xBB67AE85
ROUNDS = 10

MAX_CHANNELS = 1 << 12
MAX_STREAM = 1 << 20

_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# named streams; re-noising at denoising step s uses STREAM_RENOISE + s
STREAM_INJECT = 1
STREAM_FORWARD = 2
STREAM_RENOISE = 16
STREAM_FLICKER = 1 << 16


def philox4x32(counter, key, rounds: int = ROUNDS):
    """Vectorised Philox4x32: ``counter`` is 4 uint32 arrays, ``key`` 2 ints.

    Returns four uint64 arrays holding 32-bit output words.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    m0, m1 = np.uint64(PHILOX_M0), np.uint64(PHILOX_M1)
    for r in range(rounds):
        if r:
            k0 = (k0 + PHILOX_W0) & 0xFFFFFFFF
            k1 = (k1 + PHILOX_W1) & 0xFFFFFFFF
        p0 = m0 * c0
        p1 = m1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = (
            hi1 ^ c1 ^ np.uint64(k0),
            lo1,
            hi0 ^ c3 ^ np.uint64(k1),
            lo0,
        )
    return c0, c1, c2, c3


def _uniform53(a, b):
    hi = (a >> np.uint64(5)).astype(np.float64)
    lo = (b >> np.uint64(6)).astype(np.float64)
    return (hi * 67108864.0 + lo + 0.5) / 9007199254740992.0


def seed_key(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def keyed_normal(seed: int, shape, stream: int = 0, frame_offset: int = 0) -> np.ndarray:
    """Standard-normal field of ``shape = (F, C, H, W)`` keyed by position.

    ``frame_offset`` shifts the frame coordinate so a slice of frames can be
    generated on its own and still match the full field.
    """
    f, c, h, w = (int(d) for d in shape)
    if c > MAX_CHANNELS:
        raise ValueError(f"at most {MAX_CHANNELS} channels supported, got {c}")
    if not 0 <= stream < MAX_STREAM:
        raise ValueError(f"stream id out of range: {stream}")
    ff, cc, rr, xx = np.meshgrid(
        np.arange(frame_offset, frame_offset + f, dtype=np.uint64),
        np.arange(c, dtype=np.uint64),
        np.arange(h, dtype=np.uint64),
        np.arange(w, dtype=np.uint64),
        indexing="ij",
    )
    tag = (np.uint64(stream) << np.uint64(12)) | cc
    w0, w1, w2, w3 = philox4x32((xx, rr, ff, tag), seed_key(seed))
    u1 = _uniform53(w0, w1)
    u2 = _uniform53(w2, w3)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

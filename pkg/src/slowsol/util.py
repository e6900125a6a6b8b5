"""Small shared helpers: circle lifts, deterministic RNG streams, hashing."""

from __future__ import annotations

import hashlib

import numpy as np


def lift(t):
    """Lift circle coordinates t (mod 1) to the interval (-1/2, 1/2].

    Ties at distance exactly 1/2 map to +1/2.  Works on scalars and arrays.
    """
    return 0.5 - np.mod(0.5 - np.asarray(t), 1.0)


def circle_dist(t1, t2):
    """Distance on the circle R/Z (minimum over wraparound)."""
    return np.abs(lift(np.asarray(t1) - np.asarray(t2)))


def torus_dist(q1, q2):
    """Product metric on the solid torus: circle distance plus disk distance."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    dt = circle_dist(q1[..., 0], q2[..., 0])
    dxy = np.hypot(q1[..., 1] - q2[..., 1], q1[..., 2] - q2[..., 2])
    return dt + dxy


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for substream `stream` of master seed `seed`.

    Philox is keyed by (seed, stream), so substreams are independent and the
    draw order inside one stream never depends on how many other streams were
    consumed — sampling stays deterministic under any scheduling.
    """
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()

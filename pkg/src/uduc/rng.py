"""Deterministic random streams.

Every consumer gets its own Philox stream keyed by ``(seed, stream_id, *path)``
through ``numpy.random.SeedSequence`` spawn keys, so changing how many draws
one consumer makes never shifts another consumer's numbers.
"""
from __future__ import annotations

import numpy as np

STREAMS = {
    "env-noise": 0,
    "bootstrap": 1,
    "cem": 2,
    "ensemble-init": 3,
    "trajectory-sampling": 4,
    "negatives": 5,
    "eval": 6,
}

MAX_SEED = 2**64 - 1


def stream_id(name):
    if isinstance(name, str):
        try:
            return STREAMS[name]
        except KeyError:
            raise ValueError(f"unknown stream {name!r}; known: {sorted(STREAMS)}") from None
    return int(name)


class SeededRng:
    """Single-owner random stream. Never share one between consumers."""

    def __init__(self, seed, stream, path=()):
        seed = int(seed)
        if not 0 <= seed <= MAX_SEED:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.stream_id = stream_id(stream)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(self.stream_id, *self.path))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def key(self):
        """A fresh 64-bit key for the counter-based kernel streams."""
        return np.uint64(self.generator.integers(0, 2**64, dtype=np.uint64))

    def child(self, *path):
        return SeededRng(self.seed, self.stream_id, self.path + tuple(path))


def derive_rng(seed, stream, *path):
    """Independent deterministic stream for ``(seed, stream, *path)``."""
    return SeededRng(seed, stream, path)


_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def counter_key(key, i, j=0):
    """Cheap child key for hot loops; equals ``_kernels.substream(key, i, j)``."""
    inner = _mix64((int(key) + (int(i) + 1) * _GOLDEN) & _MASK)
    return np.uint64(_mix64((inner + (int(j) + 1) * _GOLDEN) & _MASK))

"""Rank-4 float64 arrays and seeded, splittable random streams.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 laid out
C-contiguously as (batch, channel, height, width), so the flat index of
element (b, c, h, w) is ``b*C*H*W + c*H*W + h*W + w``.
"""
from __future__ import annotations

import sys

import numpy as np

from mpdropout.errors import ParameterError, SizeError

DTYPE = np.float64


def _check_shape(shape):
    shape = tuple(int(d) for d in shape)
    if len(shape) != 4:
        raise ParameterError(f"expected a 4-tuple shape, got {shape}")
    if any(d < 0 for d in shape):
        raise ParameterError(f"negative dimension in shape {shape}")
    n = 1
    for d in shape:
        n *= d
    if n * np.dtype(DTYPE).itemsize > sys.maxsize:
        raise SizeError(f"shape {shape} exceeds addressable size")
    return shape


def tensor_new(shape, fill=0.0):
    """Return a float64 tensor of ``shape`` with every element equal to ``fill``."""
    return np.full(_check_shape(shape), fill, dtype=DTYPE)


def flat_index(shape, b, c, h, w):
    _, C, H, W = shape
    return ((b * C + c) * H + h) * W + w


def check_retain_prob(p):
    p = float(p)
    if not (0.0 < p <= 1.0):
        raise ParameterError(f"retaining probability must lie in (0, 1], got {p}")
    return p


class RngStream:
    """Deterministic random source backed by the counter-based Philox generator.

    ``child(*keys)`` derives an independent substream from the root seed and
    an integer key path; the same seed and keys always give the same draws,
    regardless of how much the parent has been used.
    """

    def __init__(self, seed, _keys=()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.keys = tuple(int(k) for k in _keys)
        ss = np.random.SeedSequence([self.seed, *self.keys])
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *keys):
        return RngStream(self.seed, self.keys + keys)

    @property
    def generator(self):
        return self._gen

    def uniform(self, shape):
        return self._gen.random(shape)

    def bernoulli_mask(self, shape, p):
        p = check_retain_prob(p)
        return (self._gen.random(_check_shape(shape)) < p).astype(DTYPE)

    def gaussian(self, shape, mean=0.0, std=1.0):
        if std < 0:
            raise ParameterError(f"std must be non-negative, got {std}")
        return self._gen.normal(mean, std, size=shape).astype(DTYPE, copy=False)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, p, size=None):
        return self._gen.choice(n, p=p, size=size)


def rng_bernoulli_mask(rng, shape, p):
    """0/1 tensor whose elements are independently 1 with probability ``p``."""
    return rng.bernoulli_mask(shape, p)


def rng_gaussian(rng, shape, mean=0.0, std=1.0):
    if std < 0:
        raise ParameterError(f"std must be non-negative, got {std}")
    return rng.gaussian(_check_shape(shape), mean, std)

"""Pooling schemes: max, max-pooling dropout, scaled max, probabilistic
weighted and stochastic pooling, plus the backward pass and model counts.

Train-time ops return a :class:`PoolForwardTrace` whose ``chosen_index``
holds, per output, the flat index of the input cell that produced it (or
``DROPPED`` when every unit of the region was dropped and the output is 0).
Test-time ops (scaled max, probabilistic weighted, stochastic weighted)
return plain tensors and have no backward pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mpdropout.errors import GeometryError, ParameterError, PreconditionError
from mpdropout.tensor import DTYPE, check_retain_prob

DROPPED = -1


@dataclass(frozen=True)
class PoolSpec:
    region_h: int
    region_w: int
    stride: int

    def __post_init__(self):
        if min(self.region_h, self.region_w, self.stride) < 1:
            raise ParameterError(f"pool region and stride must be >= 1: {self}")

    @classmethod
    def square(cls, size, stride=None):
        return cls(size, size, size if stride is None else stride)

    @property
    def t(self):
        return self.region_h * self.region_w

    @property
    def non_overlapping(self):
        return self.stride == self.region_h == self.region_w

    def output_hw(self, h, w):
        if self.region_h > h or self.region_w > w:
            raise GeometryError(
                f"pool region {self.region_h}x{self.region_w} exceeds input {h}x{w}")
        return (h - self.region_h) // self.stride + 1, (w - self.region_w) // self.stride + 1


@dataclass
class PoolForwardTrace:
    pooled: np.ndarray
    chosen_index: np.ndarray
    input_shape: tuple
    spec: PoolSpec
    mask: np.ndarray | None = None


# ---------------------------------------------------------------- regions

def _as_tensor(x):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4:
        raise GeometryError(f"expected a rank-4 tensor, got shape {x.shape}")
    return x


def _regions(x, spec):
    """(N, C, OH, OW, t) copy of every pooling window, raster order inside."""
    n, c, h, w = x.shape
    oh, ow = spec.output_hw(h, w)
    s, rh, rw = spec.stride, spec.region_h, spec.region_w
    if spec.non_overlapping and h % rh == 0 and w % rw == 0:
        r = x.reshape(n, c, oh, rh, ow, rw).transpose(0, 1, 2, 4, 3, 5)
    else:
        r = sliding_window_view(x, (rh, rw), axis=(2, 3))[:, :, ::s, ::s][:, :, :oh, :ow]
    return r.reshape(n, c, oh, ow, rh * rw)


def _to_flat_index(local_choice, shape, spec):
    """Flat input index of the cell picked by ``local_choice`` (raster position in its window)."""
    n, c, h, w = shape
    oh, ow = local_choice.shape[2:]
    row, col = np.divmod(local_choice, spec.region_w)
    row += (np.arange(oh, dtype=np.int64) * spec.stride)[:, None]
    col += np.arange(ow, dtype=np.int64) * spec.stride
    row *= w
    row += col
    row += (np.arange(n * c, dtype=np.int64) * (h * w)).reshape(n, c, 1, 1)
    return row


def _require_nonnegative(x, what="activations"):
    if x.size and x.min() < 0:
        raise PreconditionError(f"{what} must be non-negative (ReLU precedes pooling)")


def extract_region(x, spec, b, c, out_h, out_w):
    """Values of one pooling region in raster order with their (h, w) coordinates."""
    x = _as_tensor(x)
    _, _, h, w = x.shape
    h0, w0 = out_h * spec.stride, out_w * spec.stride
    if out_h < 0 or out_w < 0 or h0 + spec.region_h > h or w0 + spec.region_w > w:
        raise GeometryError(
            f"window at output ({out_h}, {out_w}) exceeds input bounds {h}x{w}")
    coords = [(h0 + i, w0 + j) for i in range(spec.region_h) for j in range(spec.region_w)]
    return [float(x[b, c, i, j]) for i, j in coords], coords


# ---------------------------------------------------------------- train time

def max_pool_forward(x, spec):
    x = _as_tensor(x)
    r = _regions(x, spec)
    arg = r.argmax(axis=-1)  # first maximum wins ties
    pooled = np.take_along_axis(r, arg[..., None], axis=-1)[..., 0]
    return PoolForwardTrace(pooled, _to_flat_index(arg, x.shape, spec), x.shape, spec)


def max_pool_dropout_forward(x, spec, p, rng=None, mask=None):
    """Max over the dropout-masked input.

    The Bernoulli mask is drawn per input unit (shape of ``x``), so regions
    sharing a unit under overlapping pooling see the same keep/drop decision.
    Pass ``mask`` to freeze it (gradient checks); otherwise ``rng`` is used.
    """
    x = _as_tensor(x)
    p = check_retain_prob(p)
    _require_nonnegative(x)
    if mask is None:
        if rng is None:
            raise ParameterError("either rng or mask is required")
        mask = rng.bernoulli_mask(x.shape, p)
    elif mask.shape != x.shape:
        raise GeometryError(f"mask shape {mask.shape} does not match input {x.shape}")
    if p == 1.0:
        trace = max_pool_forward(x, spec)
        trace.mask = mask
        return trace
    r = _regions(np.where(mask > 0, x, -np.inf), spec)
    arg = r.argmax(axis=-1)
    best = np.take_along_axis(r, arg[..., None], axis=-1)[..., 0]
    dropped = np.isneginf(best)
    pooled = np.where(dropped, 0.0, best)
    chosen = _to_flat_index(arg, x.shape, spec)
    chosen[dropped] = DROPPED
    return PoolForwardTrace(pooled, chosen, x.shape, spec, mask)


def dropout_index_probs(n, p):
    """[q^n, p q^(n-1), ..., p q, p]: probability that the i-th smallest
    activation (i >= 1) is the pooled output, index 0 being the all-dropped event."""
    n = int(n)
    if n < 1:
        raise ParameterError(f"region size must be >= 1, got {n}")
    p = check_retain_prob(p)
    q = 1.0 - p
    probs = np.empty(n + 1, dtype=DTYPE)
    probs[0] = q ** n
    probs[1:] = p * q ** np.arange(n - 1, -1, -1, dtype=DTYPE)
    return probs


def _region_values(region):
    a = np.asarray(region, dtype=DTYPE).ravel()
    if a.size == 0:
        raise ParameterError("pooling region must be non-empty")
    _require_nonnegative(a)
    return a


def multinomial_pool_sample(region, p, rng, size=None):
    """Sample the pooled value by drawing a sorted index from the dropout index distribution.

    Returns ``(value, index)`` where ``index`` counts into the region sorted
    non-decreasingly from 1, and 0 stands for the all-dropped event
    (value 0). With ``size`` both are arrays of that many independent draws.
    """
    a = np.sort(_region_values(region), kind="stable")
    probs = dropout_index_probs(a.size, p)
    idx = rng.choice(a.size + 1, probs, size=size)
    padded = np.concatenate(([0.0], a))
    value = padded[idx]
    if size is None:
        return float(value), int(idx)
    return value, idx


# ---------------------------------------------------------------- test time

def scaled_max_pool(x, spec, p):
    p = check_retain_prob(p)
    return p * max_pool_forward(x, spec).pooled


def prob_weighted_pool(x, spec, p):
    """Expected max-pooling-dropout output: sum_i p q^(n-i) a_(i) over the sorted region."""
    x = _as_tensor(x)
    _require_nonnegative(x)
    weights = dropout_index_probs(spec.t, p)[1:]
    return np.sort(_regions(x, spec), axis=-1) @ weights


# ---------------------------------------------------------------- stochastic pooling

def stochastic_pool_probs(region):
    """Activations normalised to sum 1; uniform when the region sums to 0."""
    a = _region_values(region)
    total = a.sum()
    if total == 0:
        return np.full(a.size, 1.0 / a.size)
    return a / total


def stochastic_pool_sample(region, rng, size=None):
    a = _region_values(region)
    idx = rng.choice(a.size, stochastic_pool_probs(a), size=size)
    if size is None:
        return float(a[idx]), int(idx)
    return a[idx], idx


def stochastic_pool_forward(x, spec, rng):
    """Train-time stochastic pooling over a whole tensor."""
    x = _as_tensor(x)
    _require_nonnegative(x)
    r = _regions(x, spec)
    t = spec.t
    cs = np.cumsum(r, axis=-1)
    total = cs[..., -1]
    u = rng.uniform(total.shape)
    # first k with cumsum > u * total; zero-probability cells are skipped
    arg = (cs <= (u * total)[..., None]).sum(axis=-1)
    zero = total == 0
    arg = np.where(zero, np.minimum((u * t).astype(np.int64), t - 1), np.minimum(arg, t - 1))
    pooled = np.take_along_axis(r, arg[..., None], axis=-1)[..., 0]
    return PoolForwardTrace(pooled, _to_flat_index(arg, x.shape, spec), x.shape, spec)


def stochastic_pool_weighted(x, spec):
    """Activation-weighted average sum(a^2) / sum(a) per region (0 for all-zero regions)."""
    x = _as_tensor(x)
    _require_nonnegative(x)
    r = _regions(x, spec)
    total = r.sum(axis=-1)
    sq = (r * r).sum(axis=-1)
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, sq / safe, 0.0)


# ---------------------------------------------------------------- backward

def pool_backward(trace, grad_out):
    """Route each output gradient to the input cell recorded in ``trace``.

    Overlapping regions that picked the same cell accumulate; dropped
    regions route nothing.
    """
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if grad_out.shape != trace.pooled.shape:
        raise GeometryError(
            f"grad_out shape {grad_out.shape} does not match pooled {trace.pooled.shape}")
    idx = trace.chosen_index.ravel()
    g = grad_out.ravel()
    keep = idx != DROPPED
    size = int(np.prod(trace.input_shape))
    if not keep.all():
        idx, g = idx[keep], g[keep]
    return np.bincount(idx, weights=g, minlength=size).reshape(trace.input_shape)


# ---------------------------------------------------------------- model counts

class ModelCount(NamedTuple):
    count: int
    log10: float


def model_count(r, s, t):
    """Number of distinct max-pooling-dropout networks, (1 + t) ** (r*s/t).

    ``r`` feature maps of ``s`` units each, non-overlapping regions of ``t`` units.
    """
    r, s, t = int(r), int(s), int(t)
    if r < 1 or s < 1 or t < 1:
        raise ParameterError(f"r, s, t must be positive, got {(r, s, t)}")
    if (r * s) % t:
        raise ParameterError(f"t={t} does not divide r*s={r * s}")
    exponent = r * s // t
    return ModelCount((1 + t) ** exponent, exponent * math.log10(1 + t))


def model_count_base(t):
    """Per-unit base (1 + t) ** (1/t); 2 for t = 1, decreasing in t."""
    if t < 1:
        raise ParameterError(f"region size must be >= 1, got {t}")
    return (1.0 + t) ** (1.0 / t)

"""Convolution, dense, ReLU, softmax cross-entropy, fully-connected dropout
and momentum SGD on float64 numpy arrays."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mpdropout.errors import GeometryError, ParameterError
from mpdropout.tensor import DTYPE, check_retain_prob

INIT_STD = 0.1


@dataclass
class ConvLayer:
    weights: np.ndarray  # (out_channels, in_channels, f_h, f_w)
    bias: np.ndarray

    @classmethod
    def zeros(cls, out_channels, in_channels, f_h, f_w=None):
        f_w = f_h if f_w is None else f_w
        if min(out_channels, in_channels, f_h, f_w) < 1:
            raise ParameterError("conv dimensions must be >= 1")
        return cls(np.zeros((out_channels, in_channels, f_h, f_w), DTYPE),
                   np.zeros(out_channels, DTYPE))

    @property
    def params(self):
        return [self.weights, self.bias]


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_units, in_units)
    bias: np.ndarray

    @classmethod
    def zeros(cls, out_units, in_units):
        if min(out_units, in_units) < 1:
            raise ParameterError("dense dimensions must be >= 1")
        return cls(np.zeros((out_units, in_units), DTYPE), np.zeros(out_units, DTYPE))

    @property
    def params(self):
        return [self.weights, self.bias]


def init_params(layer, rng):
    """Weights ~ N(0, 0.1^2), biases 0, in place."""
    layer.weights[...] = rng.gaussian(layer.weights.shape, 0.0, INIT_STD)
    layer.bias[...] = 0.0
    return layer


# ---------------------------------------------------------------- convolution

def _im2col(x, f_h, f_w):
    n, c, h, w = x.shape
    oh, ow = h - f_h + 1, w - f_w + 1
    win = sliding_window_view(x, (f_h, f_w), axis=(2, 3))  # n, c, oh, ow, fh, fw
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * f_h * f_w)


def _check_conv(layer, x):
    if x.ndim != 4:
        raise GeometryError(f"conv input must be rank 4, got shape {x.shape}")
    f, c, fh, fw = layer.weights.shape
    if x.shape[1] != c:
        raise GeometryError(f"conv expects {c} input channels, got {x.shape[1]}")
    if fh > x.shape[2] or fw > x.shape[3]:
        raise GeometryError(f"{fh}x{fw} filter exceeds {x.shape[2]}x{x.shape[3]} input")


def conv_forward(layer, x, return_cols=False):
    """Valid, stride-1 cross-correlation plus bias."""
    x = np.asarray(x, dtype=DTYPE)
    _check_conv(layer, x)
    f, c, fh, fw = layer.weights.shape
    n, _, h, w = x.shape
    oh, ow = h - fh + 1, w - fw + 1
    cols = _im2col(x, fh, fw)
    out = cols @ layer.weights.reshape(f, -1).T
    out += layer.bias
    out = np.ascontiguousarray(out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2))
    return (out, cols) if return_cols else out


def conv_backward(layer, x, grad_out, cols=None, need_input_grad=True):
    """Return (grad_input, grad_weights, grad_bias); grad_input is None if not requested."""
    x = np.asarray(x, dtype=DTYPE)
    _check_conv(layer, x)
    f, c, fh, fw = layer.weights.shape
    n, _, h, w = x.shape
    oh, ow = h - fh + 1, w - fw + 1
    if grad_out.shape != (n, f, oh, ow):
        raise GeometryError(f"grad_out shape {grad_out.shape} != {(n, f, oh, ow)}")
    if cols is None:
        cols = _im2col(x, fh, fw)
    go = grad_out.transpose(0, 2, 3, 1).reshape(-1, f)
    grad_w = (go.T @ cols).reshape(layer.weights.shape)
    grad_b = go.sum(axis=0)
    if not need_input_grad:
        return None, grad_w, grad_b
    dcols = (go @ layer.weights.reshape(f, -1)).reshape(n, oh, ow, c, fh, fw)
    dcols = dcols.transpose(0, 3, 4, 5, 1, 2)  # n, c, fh, fw, oh, ow
    grad_x = np.zeros_like(x)
    for i in range(fh):
        for j in range(fw):
            grad_x[:, :, i:i + oh, j:j + ow] += dcols[:, :, i, j]
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------- dense / relu

def _flatten(x):
    x = np.asarray(x, dtype=DTYPE)
    return x.reshape(x.shape[0], -1)


def dense_forward(layer, x):
    x = _flatten(x)
    if x.shape[1] != layer.weights.shape[1]:
        raise GeometryError(
            f"dense expects {layer.weights.shape[1]} inputs, got {x.shape[1]}")
    return x @ layer.weights.T + layer.bias


def dense_backward(layer, x, grad_out):
    """Return (grad_input shaped like ``x``, grad_weights, grad_bias)."""
    x2 = _flatten(x)
    if grad_out.shape != (x2.shape[0], layer.weights.shape[0]):
        raise GeometryError(f"grad_out shape {grad_out.shape} mismatches dense layer")
    grad_x = (grad_out @ layer.weights).reshape(np.shape(x))
    return grad_x, grad_out.T @ x2, grad_out.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    # subgradient 0 at x == 0
    if np.shape(grad_out) != np.shape(x):
        raise GeometryError("relu grad_out shape mismatch")
    return np.where(np.asarray(x) > 0, grad_out, 0.0)


# ---------------------------------------------------------------- loss

def softmax_xent(logits, labels):
    """Mean cross-entropy of softmax(logits) and its gradient w.r.t. the logits."""
    z = _flatten(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = z.shape
    if labels.shape != (n,):
        raise GeometryError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ParameterError(f"labels must lie in [0, {k})")
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_prob = z - log_norm
    rows = np.arange(n)
    loss = -log_prob[rows, labels].mean()
    grad = np.exp(log_prob)
    grad[rows, labels] -= 1.0
    grad /= n
    return float(loss), grad.reshape(np.shape(logits))


# ---------------------------------------------------------------- dropout

def fc_dropout_train(x, p, rng, mask=None):
    """Return (masked input, mask)."""
    p = check_retain_prob(p)
    x = np.asarray(x, dtype=DTYPE)
    if mask is None:
        mask = (rng.uniform(x.shape) < p).astype(DTYPE)
    return x * mask, mask


def fc_dropout_test(x, p):
    """Scale activations by the retaining probability."""
    return check_retain_prob(p) * np.asarray(x, dtype=DTYPE)


# ---------------------------------------------------------------- optimiser

@dataclass
class MomentumSGD:
    learning_rate: float = 0.1
    momentum: float = 0.95
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError("learning rate must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ParameterError("momentum must lie in [0, 1)")

    def step(self, params, grads):
        sgd_momentum_step(params, grads, self)


def sgd_momentum_step(params, grads, opt):
    """v <- momentum*v - lr*grad; param <- param + v (in place)."""
    if not opt.velocity:
        opt.velocity = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(opt.velocity):
        raise GeometryError("params, grads and velocity buffers differ in length")
    for p, g, v in zip(params, grads, opt.velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise GeometryError(f"shape mismatch {p.shape} / {g.shape} / {v.shape}")
        v *= opt.momentum
        v -= opt.learning_rate * g
        p += v

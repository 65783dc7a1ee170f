"""A layer stack built from an :class:`ArchSpec` with switchable pooling modes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mpdropout import layers as L
from mpdropout import pooling as P
from mpdropout.arch import Conv, Dense, Pool
from mpdropout.errors import GeometryError, ParameterError
from mpdropout.tensor import check_retain_prob

TRAIN_POOL_MODES = ("max", "max_dropout", "stochastic")
TEST_POOL_MODES = ("max", "scaled_max", "prob_weighted", "stochastic_weighted")


@dataclass(frozen=True)
class PoolingConfig:
    train_mode: str = "max_dropout"
    test_mode: str = "prob_weighted"
    p: float = 0.5
    fc_dropout_p: float | None = None

    def __post_init__(self):
        if self.train_mode not in TRAIN_POOL_MODES:
            raise ParameterError(f"unknown train pool mode {self.train_mode!r}")
        if self.test_mode not in TEST_POOL_MODES:
            raise ParameterError(f"unknown test pool mode {self.test_mode!r}")
        check_retain_prob(self.p)
        if self.fc_dropout_p is not None:
            check_retain_prob(self.fc_dropout_p)


def test_pool(x, spec, mode, p):
    if mode == "max":
        return P.max_pool_forward(x, spec).pooled
    if mode == "scaled_max":
        return P.scaled_max_pool(x, spec, p)
    if mode == "prob_weighted":
        return P.prob_weighted_pool(x, spec, p)
    if mode == "stochastic_weighted":
        return P.stochastic_pool_weighted(x, spec)
    raise ParameterError(f"unknown test pool mode {mode!r}")


def train_pool(x, spec, mode, p, rng, mask=None):
    if mode == "max":
        return P.max_pool_forward(x, spec)
    if mode == "max_dropout":
        return P.max_pool_dropout_forward(x, spec, p, rng, mask=mask)
    if mode == "stochastic":
        return P.stochastic_pool_forward(x, spec, rng)
    raise ParameterError(f"unknown train pool mode {mode!r}")


class Network:
    """Conv/pool feature extractor followed by dense layers and a softmax output.

    ReLU follows every convolution and every hidden dense layer.
    """

    def __init__(self, arch, rng=None):
        self.arch = arch
        self.layers = []  # (kind, obj)
        c = arch.input_shape[0]
        flat = None
        for layer, shape_in in zip(arch.layers, arch.shapes):
            if isinstance(layer, Conv):
                self.layers.append(("conv", L.ConvLayer.zeros(layer.maps, c, layer.filter)))
                c = layer.maps
            elif isinstance(layer, Pool):
                self.layers.append(("pool", P.PoolSpec.square(layer.region, layer.stride)))
            elif isinstance(layer, Dense):
                n_in = int(np.prod(shape_in)) if flat is None else flat
                self.layers.append(("dense", L.DenseLayer.zeros(layer.units, n_in)))
                flat = layer.units
        self._last_dense = max(i for i, (k, _) in enumerate(self.layers) if k == "dense")
        if rng is not None:
            self.init(rng)

    def init(self, rng):
        for i, (kind, obj) in enumerate(self.layers):
            if kind in ("conv", "dense"):
                L.init_params(obj, rng.child(i))

    @property
    def params(self):
        return [p for kind, obj in self.layers if kind in ("conv", "dense") for p in obj.params]

    def set_params(self, arrays):
        params = self.params
        if len(arrays) != len(params):
            raise GeometryError(f"expected {len(params)} parameter arrays, got {len(arrays)}")
        for dst, src in zip(params, arrays):
            if dst.shape != src.shape:
                raise GeometryError(f"parameter shape {src.shape} != {dst.shape}")
            dst[...] = src

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1:] != tuple(self.arch.input_shape):
            raise GeometryError(
                f"input shape {x.shape[1:]} does not match architecture {self.arch.input_shape}")

    # ------------------------------------------------------------ inference

    def predict(self, x, config):
        """Test-time logits: configured test pooling and fc-dropout scaling."""
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        for i, (kind, obj) in enumerate(self.layers):
            if kind == "conv":
                x = L.relu_forward(L.conv_forward(obj, x))
            elif kind == "pool":
                x = test_pool(x, obj, config.test_mode, config.p)
            else:
                if config.fc_dropout_p is not None:
                    x = L.fc_dropout_test(x, config.fc_dropout_p)
                x = L.dense_forward(obj, x)
                if i != self._last_dense:
                    x = L.relu_forward(x)
        return x

    # ------------------------------------------------------------ training

    def loss_and_grads(self, x, labels, config, rng=None, masks=None):
        """Train-mode forward and backward pass.

        Returns ``(loss, grads, traces)`` with ``grads`` aligned to
        :attr:`params`. ``masks`` maps a layer index to a frozen dropout mask
        (pooling or fc), which is used instead of drawing one from ``rng``.
        """
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        masks = masks or {}
        if rng is None and (config.train_mode != "max" or config.fc_dropout_p is not None):
            if not masks:
                raise ParameterError("a random stream is required for stochastic training")
        cache = []
        traces = {}
        for i, (kind, obj) in enumerate(self.layers):
            sub = rng.child(i) if rng is not None else None
            if kind == "conv":
                pre, cols = L.conv_forward(obj, x, return_cols=True)
                cache.append((x, cols, pre))
                x = L.relu_forward(pre)
            elif kind == "pool":
                trace = train_pool(x, obj, config.train_mode, config.p, sub, mask=masks.get(i))
                traces[i] = trace
                cache.append(trace)
                x = trace.pooled
            else:
                mask = None
                if config.fc_dropout_p is not None:
                    x, mask = L.fc_dropout_train(x, config.fc_dropout_p, sub, mask=masks.get(i))
                    traces[i] = mask
                pre = L.dense_forward(obj, x)
                cache.append((x, mask, pre))
                x = pre if i == self._last_dense else L.relu_forward(pre)

        loss, g = L.softmax_xent(x, labels)
        if not np.isfinite(loss):
            return loss, None, traces

        grads = []
        for i in range(len(self.layers) - 1, -1, -1):
            kind, obj = self.layers[i]
            if kind == "conv":
                inp, cols, pre = cache[i]
                g = L.relu_backward(pre, g)
                g, gw, gb = L.conv_backward(obj, inp, g, cols=cols, need_input_grad=i > 0)
                grads += [gb, gw]
            elif kind == "pool":
                g = P.pool_backward(cache[i], g)
            else:
                inp, mask, pre = cache[i]
                if i != self._last_dense:
                    g = L.relu_backward(pre, g)
                g, gw, gb = L.dense_backward(obj, inp, g)
                if mask is not None:
                    g = g * mask
                grads += [gb, gw]
        grads.reverse()
        return loss, grads, traces

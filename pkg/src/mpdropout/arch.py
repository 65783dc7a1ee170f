"""Architecture strings such as ``1x28x28-20C5-2P2-40C5-2P2-1000N-10N``.

``<C>x<H>x<W>`` is the input, ``<k>C<f>`` a convolution with k maps and
f x f filters, ``<t>P<s>`` a t x t max-pooling region with stride s and
``<u>N`` a fully-connected layer of u units (the last one is the output).
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from mpdropout.errors import ArchParseError

PRESETS = {
    "mnist": "1x28x28-20C5-2P2-40C5-2P2-1000N-10N",
    "cifar10": "3x32x32-96C5-3P2-128C3-3P2-256C3-3P2-2000N-2000N-10N",
    "cifar100": "3x32x32-96C5-3P2-128C3-3P2-256C3-3P2-2000N-2000N-100N",
}

_INPUT = re.compile(r"(\d+)x(\d+)x(\d+)")
_CONV = re.compile(r"(\d+)C(\d+)")
_POOL = re.compile(r"(\d+)P(\d+)")
_DENSE = re.compile(r"(\d+)N")


@dataclass(frozen=True)
class Conv:
    maps: int
    filter: int


@dataclass(frozen=True)
class Pool:
    region: int
    stride: int


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class ArchSpec:
    text: str
    input_shape: tuple  # (C, H, W)
    layers: tuple
    # shape after the input and after each layer: (C, H, W) for conv/pool, (u,) for dense
    shapes: tuple

    @property
    def n_classes(self):
        return self.layers[-1].units

    def shape_chain(self):
        return "  ->  ".join("x".join(map(str, s)) for s in self.shapes)

    def pool_inputs(self):
        """(layer index, Pool, (C, H, W) input shape) for every pooling layer."""
        return [(i, layer, self.shapes[i]) for i, layer in enumerate(self.layers)
                if isinstance(layer, Pool)]


def parse_arch(text):
    """Parse an architecture string (or preset name) and derive its shape chain."""
    text = PRESETS.get(text, text).strip()
    tokens = text.split("-")
    m = _INPUT.fullmatch(tokens[0])
    if not m:
        raise ArchParseError("expected <C>x<H>x<W> input token", tokens[0])
    shape = tuple(int(g) for g in m.groups())
    if min(shape) < 1:
        raise ArchParseError("input dimensions must be positive", tokens[0])
    shapes = [shape]
    layers = []
    seen_dense = False
    for tok in tokens[1:]:
        conv, pool = _CONV.fullmatch(tok), _POOL.fullmatch(tok)
        if conv or pool:
            if seen_dense:
                raise ArchParseError("convolution/pooling after a fully-connected layer", tok)
            c, h, w = shape
            if conv:
                k, f = map(int, conv.groups())
                if k < 1 or f < 1:
                    raise ArchParseError("non-positive convolution parameter", tok)
                layer, shape = Conv(k, f), (k, h - f + 1, w - f + 1)
            else:
                t, s = map(int, pool.groups())
                if t < 1 or s < 1:
                    raise ArchParseError("non-positive pooling parameter", tok)
                if t > h or t > w:
                    shape = (c, 0, 0)
                else:
                    shape = (c, (h - t) // s + 1, (w - t) // s + 1)
                layer = Pool(t, s)
        elif m := _DENSE.fullmatch(tok):
            seen_dense = True
            layer = Dense(int(m.group(1)))
            shape = (layer.units,)
        else:
            raise ArchParseError("malformed token", tok)
        if min(shape) < 1:
            raise ArchParseError("non-positive derived dimension", tok)
        layers.append(layer)
        shapes.append(shape)
    if not seen_dense:
        raise ArchParseError("architecture needs at least one <u>N output layer", text)
    return ArchSpec(text, shapes[0], tuple(layers), tuple(shapes))

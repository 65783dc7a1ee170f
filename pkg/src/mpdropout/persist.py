"""Versioned binary parameter dump.

Layout (all integers little-endian)::

    b"MPDP"                      magic
    u32 version                  currently 1
    u32 n, n bytes               architecture string, UTF-8
    u32 count                    number of parameter arrays
    count times:
        u32 ndim, ndim * u64     shape
        prod(shape) * f64        values, C order
"""
from __future__ import annotations

import struct

import numpy as np

from mpdropout.arch import parse_arch
from mpdropout.errors import FormatError
from mpdropout.network import Network

MAGIC = b"MPDP"
VERSION = 1


def save_params(network, path):
    arch = network.arch.text.encode()
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<II", VERSION, len(arch)) + arch)
        params = network.params
        f.write(struct.pack("<I", len(params)))
        for p in params:
            f.write(struct.pack("<I", p.ndim) + struct.pack(f"<{p.ndim}Q", *p.shape))
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_params(path):
    """Rebuild the :class:`Network` stored at ``path``."""
    data = open(path, "rb").read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated parameter file", offset=pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise FormatError(f"{path}: not a parameter dump", offset=0)
    version, n = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    net = Network(parse_arch(take(n).decode()))
    (count,) = struct.unpack("<I", take(4))
    arrays = []
    for _ in range(count):
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape)) * 8
        arrays.append(np.frombuffer(take(size), "<f8").reshape(shape).astype(np.float64))
    net.set_params(arrays)
    return net

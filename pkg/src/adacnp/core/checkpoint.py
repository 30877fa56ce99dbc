"""Binary serialisation of MLP parameters.

Layout of one network block (all integers unsigned 32-bit little-endian)::

    b"MLPP"                magic
    u32 version            currently 1
    u32 activation tag     0 = relu, 1 = tanh
    u32 n                  number of layer sizes
    u32 * n                layer sizes
    per layer k, in order:
        f64 * (out * in)   weight matrix, row-major, little-endian
        f64 * out          bias vector
"""

from __future__ import annotations

import struct

import numpy as np

from adacnp.core.mlp import MlpParams
from adacnp.errors import DataError

MAGIC = b"MLPP"
VERSION = 1
ACTIVATION_TAGS = {"relu": 0, "tanh": 1}
_TAG_NAMES = {v: k for k, v in ACTIVATION_TAGS.items()}
_F64 = np.dtype("<f8")


def pack_mlp(params: MlpParams) -> bytes:
    sizes = params.layer_sizes
    parts = [
        MAGIC,
        struct.pack("<III", VERSION, ACTIVATION_TAGS[params.activation], len(sizes)),
        struct.pack(f"<{len(sizes)}I", *sizes),
    ]
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype=_F64).tobytes())
        parts.append(np.ascontiguousarray(b, dtype=_F64).tobytes())
    return b"".join(parts)


class Reader:
    """Cursor over a bytes buffer with bounds checking."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self, n):
        if self.pos + n > len(self.data):
            raise DataError("checkpoint truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))

    def floats(self, count):
        return np.frombuffer(self.read(8 * count), dtype=_F64).astype(np.float64)


def unpack_mlp(reader: Reader) -> MlpParams:
    if reader.read(4) != MAGIC:
        raise DataError("bad MLP block magic")
    version, tag, n = reader.unpack("<III")
    if version != VERSION:
        raise DataError(f"unsupported MLP block version {version}")
    if tag not in _TAG_NAMES:
        raise DataError(f"unknown activation tag {tag}")
    sizes = reader.unpack(f"<{n}I")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(reader.floats(fan_in * fan_out).reshape(fan_out, fan_in))
        biases.append(reader.floats(fan_out))
    return MlpParams(sizes, weights, biases, _TAG_NAMES[tag])


def save_mlp(params, path):
    with open(path, "wb") as fh:
        fh.write(pack_mlp(params))


def load_mlp(path):
    with open(path, "rb") as fh:
        reader = Reader(fh.read())
    params = unpack_mlp(reader)
    if reader.pos != len(reader.data):
        raise DataError("trailing bytes after MLP block")
    return params

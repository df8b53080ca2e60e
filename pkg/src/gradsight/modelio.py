"""CNVZ1 binary model files.

Layout (all integers and floats little-endian)::

    b"CNVZ1"  u16 version  u32 layer_count
    per layer: u8 kind tag, shape header (u32 fields), float32 payload
        conv     out in kh kw stride padding | weights, bias
        relu     -
        maxpool  ph pw stride
        fc       out in | weights, bias
        softmax  -
    mean image: u32 channels rows cols | float32 payload
    u32 class_count, then per name: u32 byte length + UTF-8 bytes
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from gradsight.network import Conv, FullyConnected, MaxPool, Network, ReLU, Softmax
from gradsight.tensor import ConvKernel, PoolSpec, ShapeError

MAGIC = b"CNVZ1"
VERSION = 1
_TAGS = {Conv: 0, ReLU: 1, MaxPool: 2, FullyConnected: 3, Softmax: 4}


class ModelFormatError(ValueError):
    pass


class BadMagicError(ModelFormatError):
    pass


class TruncatedError(ModelFormatError):
    pass


class ShapeInconsistencyError(ModelFormatError):
    pass


def _f32(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def dumps(net: Network) -> bytes:
    out = [MAGIC, struct.pack("<HI", VERSION, len(net.layers))]
    for layer in net.layers:
        out.append(struct.pack("<B", _TAGS[type(layer)]))
        if isinstance(layer, Conv):
            k = layer.kernel
            out.append(struct.pack("<6I", *k.weights.shape, k.stride, k.padding))
            out += [_f32(k.weights), _f32(k.bias)]
        elif isinstance(layer, MaxPool):
            out.append(struct.pack("<3I", *layer.spec.window, layer.spec.stride))
        elif isinstance(layer, FullyConnected):
            out.append(struct.pack("<2I", *layer.weights.shape))
            out += [_f32(layer.weights), _f32(layer.bias)]
    out.append(struct.pack("<3I", *net.mean_image.shape))
    out.append(_f32(net.mean_image))
    out.append(struct.pack("<I", len(net.class_names)))
    for name in net.class_names:
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        chunk = self.data[self.pos : self.pos + n]
        if len(chunk) < n:
            raise TruncatedError(
                f"truncated model file: need {n} bytes for {what} at offset {self.pos}, "
                f"{len(chunk)} available"
            )
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, shape, what: str) -> np.ndarray:
        count = int(np.prod(shape))
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)


def loads(data: bytes) -> Network:
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {data[:len(MAGIC)]!r}; expected {MAGIC!r}")
    rd = _Reader(data)
    rd.pos = len(MAGIC)
    version, count = rd.unpack("<HI", "header")
    if version != VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    layers = []
    for i in range(count):
        (tag,) = rd.unpack("<B", f"layer {i} tag")
        if tag == 0:
            o, c, kh, kw, stride, pad = rd.unpack("<6I", f"layer {i} conv header")
            w = rd.floats((o, c, kh, kw), f"layer {i} conv weights")
            b = rd.floats((o,), f"layer {i} conv bias")
            try:
                layers.append(Conv(ConvKernel(w, b, stride, pad)))
            except ValueError as exc:
                raise ShapeInconsistencyError(f"layer {i}: {exc}") from exc
        elif tag == 1:
            layers.append(ReLU())
        elif tag == 2:
            ph, pw, stride = rd.unpack("<3I", f"layer {i} pool header")
            try:
                layers.append(MaxPool(PoolSpec((ph, pw), stride)))
            except ValueError as exc:
                raise ShapeInconsistencyError(f"layer {i}: {exc}") from exc
        elif tag == 3:
            o, n_in = rd.unpack("<2I", f"layer {i} fc header")
            w = rd.floats((o, n_in), f"layer {i} fc weights")
            b = rd.floats((o,), f"layer {i} fc bias")
            layers.append(FullyConnected(w, b))
        elif tag == 4:
            layers.append(Softmax())
        else:
            raise ModelFormatError(f"layer {i}: unknown kind tag {tag}")
    shape = rd.unpack("<3I", "mean image header")
    mean = rd.floats(shape, "mean image")
    (n_names,) = rd.unpack("<I", "class table")
    names = []
    for j in range(n_names):
        (length,) = rd.unpack("<I", f"class name {j} length")
        try:
            names.append(rd.take(length, f"class name {j}").decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise ModelFormatError(f"class name {j} is not valid UTF-8") from exc
    if rd.pos != len(data):
        raise ModelFormatError(f"{len(data) - rd.pos} trailing bytes after class table")
    try:
        return Network(tuple(layers), mean, tuple(names))
    except (ShapeError, ValueError) as exc:
        raise ShapeInconsistencyError(f"layers do not compose: {exc}") from exc


def save_model(net: Network, path) -> None:
    Path(path).write_bytes(dumps(net))


def load_model(path) -> Network:
    return loads(Path(path).read_bytes())

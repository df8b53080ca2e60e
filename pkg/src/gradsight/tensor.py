"""Dense NCHW tensor primitives: forward and backward passes for conv, ReLU,
max-pool and fully-connected layers.

Tensors are plain ``numpy.ndarray`` values shaped ``(batch, channels, rows,
cols)``.  Within one batch item the flat index of pixel ``(i, j)`` in channel
``c`` is ``c*rows*cols + i*cols + j`` (C order), which is what
:func:`flat_index` returns.

Every function is pure: inputs are never modified and the result dtype follows
the inputs, so the same code serves float32 inference and float64 checks.
Convolution is cross-correlation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ShapeError",
    "ConvKernel",
    "PoolSpec",
    "flat_index",
    "conv_output_shape",
    "conv_forward",
    "conv_backward_input",
    "conv_backward_params",
    "conv_transpose_flipped",
    "relu_forward",
    "relu_backward",
    "pool_output_shape",
    "maxpool_forward",
    "maxpool_backward",
    "fc_forward",
    "fc_backward_input",
    "softmax",
]


class ShapeError(ValueError):
    """Raised when tensor shapes do not compose."""


def flat_index(shape, c, i, j):
    """Flat position of channel ``c``, row ``i``, column ``j`` in one batch item."""
    _, _, h, w = shape
    return c * (h * w) + i * w + j


@dataclass(frozen=True)
class ConvKernel:
    weights: np.ndarray  # (out_channels, in_channels, kh, kw)
    bias: np.ndarray  # (out_channels,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"kernel weights must be 4-D, got shape {self.weights.shape}")
        if self.weights.shape[2] < 1 or self.weights.shape[3] < 1:
            raise ShapeError(f"kernel extent must be >= 1, got {self.weights.shape[2:]}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match out_channels {self.weights.shape[0]}"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def size(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]

    def flipped(self) -> "ConvKernel":
        """Spatially reversed kernel with in/out channel roles swapped.

        The bias is dropped to zero: it has no counterpart on the reverse pass.
        ``k.flipped().flipped()`` has the weights of ``k``.
        """
        w = self.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        return ConvKernel(
            np.ascontiguousarray(w),
            np.zeros(w.shape[0], dtype=w.dtype),
            self.stride,
            self.padding,
        )

    def astype(self, dtype) -> "ConvKernel":
        return ConvKernel(
            self.weights.astype(dtype), self.bias.astype(dtype), self.stride, self.padding
        )


@dataclass(frozen=True)
class PoolSpec:
    window: tuple[int, int] = (2, 2)
    stride: int = 2

    def __post_init__(self):
        ph, pw = self.window
        if ph < 1 or pw < 1:
            raise ValueError(f"pool window must be >= 1, got {self.window}")
        if self.stride < 1:
            raise ValueError(f"pool stride must be >= 1, got {self.stride}")


def _check4(x, name="x"):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (batch, channels, rows, cols), got shape {x.shape}")


def conv_output_shape(input_shape, k: ConvKernel):
    n, c, h, w = input_shape
    kh, kw = k.size
    if c != k.in_channels:
        raise ShapeError(
            f"input shape {tuple(input_shape)} has {c} channels but kernel "
            f"{k.weights.shape} expects {k.in_channels}"
        )
    hp, wp = h + 2 * k.padding, w + 2 * k.padding
    if hp < kh or wp < kw:
        raise ShapeError(
            f"padded input {(hp, wp)} from shape {tuple(input_shape)} is smaller "
            f"than kernel {k.weights.shape}"
        )
    return n, k.out_channels, (hp - kh) // k.stride + 1, (wp - kw) // k.stride + 1


def _windows(x, kh, kw, stride, padding):
    """Strided view (n, c, ho, wo, kh, kw) over the zero-padded input."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv_forward(x: np.ndarray, k: ConvKernel) -> np.ndarray:
    _check4(x)
    shape = conv_output_shape(x.shape, k)
    kh, kw = k.size
    win = _windows(x, kh, kw, k.stride, k.padding)[:, :, : shape[2], : shape[3]]
    out = np.tensordot(win, k.weights, axes=([1, 4, 5], [1, 2, 3]))  # n, ho, wo, o
    out = out.transpose(0, 3, 1, 2) + k.bias[None, :, None, None]
    return np.ascontiguousarray(out)


def _check_dy(dy, input_shape, k):
    _check4(dy, "dy")
    expected = conv_output_shape(input_shape, k)
    if tuple(dy.shape) != tuple(expected):
        raise ShapeError(
            f"dy shape {dy.shape} is not the conv output {expected} "
            f"for input shape {tuple(input_shape)}"
        )


def conv_backward_input(dy: np.ndarray, k: ConvKernel, input_shape) -> np.ndarray:
    """Gradient with respect to the conv input, by scattering kernel-weighted dy.

    ``input_shape`` is needed because strided convolutions drop trailing rows
    and columns, so the input extent is not recoverable from ``dy``.
    """
    _check_dy(dy, input_shape, k)
    n, c, h, w = input_shape
    kh, kw = k.size
    s, p = k.stride, k.padding
    ho, wo = dy.shape[2], dy.shape[3]
    cols = np.tensordot(dy, k.weights, axes=([1], [0]))  # n, ho, wo, c, kh, kw
    cols = cols.transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += cols[:, :, i, j]
    return np.ascontiguousarray(dxp[:, :, p : p + h, p : p + w])


def conv_transpose_flipped(dy: np.ndarray, k: ConvKernel, input_shape) -> np.ndarray:
    """Reverse a convolution by convolving ``dy`` with the flipped kernel.

    ``dy`` is dilated by the stride and zero-padded to full extent, then passed
    through :func:`conv_forward` with ``k.flipped()`` at stride 1.  This is the
    reconstruction rule of a deconvolutional network; mathematically it equals
    :func:`conv_backward_input`, computed along an independent route.
    """
    _check_dy(dy, input_shape, k)
    n, c, h, w = input_shape
    kh, kw = k.size
    s, p = k.stride, k.padding
    ho, wo = dy.shape[2], dy.shape[3]
    dil = np.zeros((n, dy.shape[1], (ho - 1) * s + 1, (wo - 1) * s + 1), dtype=dy.dtype)
    dil[:, :, ::s, ::s] = dy
    # trailing input rows/cols never touched by a stride step get extra padding
    extra_h = h + 2 * p - ((ho - 1) * s + kh)
    extra_w = w + 2 * p - ((wo - 1) * s + kw)
    lo_h, hi_h = kh - 1 - p, kh - 1 - p + extra_h
    lo_w, hi_w = kw - 1 - p, kw - 1 - p + extra_w
    dil = np.pad(dil, ((0, 0), (0, 0), (max(lo_h, 0), max(hi_h, 0)), (max(lo_w, 0), max(hi_w, 0))))
    dil = dil[
        :,
        :,
        max(-lo_h, 0) : dil.shape[2] - max(-hi_h, 0),
        max(-lo_w, 0) : dil.shape[3] - max(-hi_w, 0),
    ]
    flipped = k.flipped()
    return conv_forward(dil, ConvKernel(flipped.weights, flipped.bias, 1, 0))


def conv_backward_params(dy: np.ndarray, x: np.ndarray, k: ConvKernel):
    """Weight and bias gradients ``(dW, db)`` of a conv layer."""
    _check_dy(dy, x.shape, k)
    kh, kw = k.size
    win = _windows(x, kh, kw, k.stride, k.padding)[:, :, : dy.shape[2], : dy.shape[3]]
    dw = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))
    return dw, dy.sum(axis=(0, 2, 3))


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dy: np.ndarray, x_saved: np.ndarray) -> np.ndarray:
    """``dy * 1(x_saved > 0)``; the sub-gradient at exactly zero is 0."""
    if dy.shape != x_saved.shape:
        raise ShapeError(f"dy shape {dy.shape} does not match saved input shape {x_saved.shape}")
    return np.where(x_saved > 0, dy, np.zeros((), dtype=dy.dtype))


def pool_output_shape(input_shape, p: PoolSpec):
    n, c, h, w = input_shape
    ph, pw = p.window
    if h < ph or w < pw:
        raise ShapeError(f"pool window {p.window} larger than input {tuple(input_shape)}")
    return n, c, (h - ph) // p.stride + 1, (w - pw) // p.stride + 1


def maxpool_forward(x: np.ndarray, p: PoolSpec):
    """Max-pool ``x`` and return ``(out, switches)``.

    ``switches[n, c, r, q]`` is the flat ``row*cols + col`` position inside the
    input channel plane of the window maximum.  Ties go to the lowest position.
    """
    _check4(x)
    shape = pool_output_shape(x.shape, p)
    ph, pw = p.window
    s = p.stride
    win = sliding_window_view(x, (ph, pw), axis=(2, 3))[:, :, ::s, ::s][:, :, : shape[2], : shape[3]]
    win = win.reshape(*shape, ph * pw)
    local = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    rows = np.arange(shape[2])[:, None] * s + local // pw
    cols = np.arange(shape[3])[None, :] * s + local % pw
    switches = (rows * x.shape[3] + cols).astype(np.int64)
    return np.ascontiguousarray(out), switches


def maxpool_backward(dy: np.ndarray, switches: np.ndarray, input_shape) -> np.ndarray:
    """Route each ``dy`` element to its switch cell, summing where windows overlap."""
    _check4(dy, "dy")
    if dy.shape != switches.shape:
        raise ShapeError(f"dy shape {dy.shape} does not match switches shape {switches.shape}")
    n, c, h, w = input_shape
    if dy.shape[:2] != (n, c):
        raise ShapeError(f"dy shape {dy.shape} incompatible with input shape {tuple(input_shape)}")
    if switches.size and (switches.min() < 0 or switches.max() >= h * w):
        raise IndexError(
            f"switch index range [{switches.min()}, {switches.max()}] outside input plane {h}x{w}"
        )
    plane = (np.arange(n * c, dtype=np.int64) * (h * w)).reshape(n, c, 1, 1)
    flat = np.bincount(
        (switches + plane).ravel(), weights=dy.ravel().astype(np.float64), minlength=n * c * h * w
    )
    return flat.astype(dy.dtype, copy=False).reshape(n, c, h, w)


def fc_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map of the flattened batch items; output shaped ``(n, m, 1, 1)``."""
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != W.shape[1]:
        raise ShapeError(
            f"flattened input length {flat.shape[1]} (shape {x.shape}) does not "
            f"match weight columns {W.shape}"
        )
    out = flat @ W.T + b
    return out.reshape(x.shape[0], W.shape[0], 1, 1)


def fc_backward_input(dy: np.ndarray, W: np.ndarray, input_shape) -> np.ndarray:
    flat = dy.reshape(dy.shape[0], -1)
    if flat.shape[1] != W.shape[0]:
        raise ShapeError(f"dy shape {dy.shape} does not match weight rows {W.shape}")
    if int(np.prod(input_shape[1:])) != W.shape[1]:
        raise ShapeError(f"input shape {tuple(input_shape)} does not match weight columns {W.shape}")
    return (flat @ W).reshape(input_shape)


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(scores)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)

"""Layered classification ConvNet: class scores, input gradients, SGD training."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from gradsight import tensor as T
from gradsight.tensor import ConvKernel, PoolSpec, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Conv:
    kernel: ConvKernel
    kind = "conv"


@dataclass(frozen=True)
class ReLU:
    kind = "relu"


@dataclass(frozen=True)
class MaxPool:
    spec: PoolSpec = field(default_factory=PoolSpec)
    kind = "maxpool"


@dataclass(frozen=True)
class FullyConnected:
    weights: np.ndarray  # (outputs, inputs)
    bias: np.ndarray
    kind = "fc"

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"fc weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )


@dataclass(frozen=True)
class Softmax:
    kind = "softmax"


Layer = Conv | ReLU | MaxPool | FullyConnected | Softmax


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Network:
    """An ordered layer stack plus the training-set mean image and class names.

    Inputs to :func:`forward` are zero-centred images; add ``mean_image`` back
    only for display.  A trailing :class:`Softmax` is never used for scores.
    """

    layers: tuple
    mean_image: np.ndarray  # (channels, rows, cols)
    class_names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Softmax) and i != len(self.layers) - 1:
                raise ValueError(f"softmax must be the last layer, found at position {i}")
        shape = (1, *self.mean_image.shape)
        for layer in self.layers:
            shape = layer_output_shape(layer, shape)
        if shape[2:] != (1, 1):
            raise ShapeError(f"network output shape {shape} is not a score vector")
        if self.class_names and len(self.class_names) != shape[1]:
            raise ValueError(
                f"{len(self.class_names)} class names for {shape[1]} network outputs"
            )

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.mean_image.shape)

    @property
    def score_layers(self) -> tuple:
        """The layers up to and including the score layer (a trailing softmax dropped)."""
        if self.layers and isinstance(self.layers[-1], Softmax):
            return self.layers[:-1]
        return self.layers

    @property
    def num_classes(self) -> int:
        shape = (1, *self.input_shape)
        for layer in self.layers:
            shape = layer_output_shape(layer, shape)
        return shape[1]

    @property
    def dtype(self):
        for layer in self.layers:
            if isinstance(layer, Conv):
                return layer.kernel.weights.dtype
            if isinstance(layer, FullyConnected):
                return layer.weights.dtype
        return self.mean_image.dtype

    def astype(self, dtype) -> "Network":
        return replace(
            self,
            layers=tuple(_layer_astype(layer, dtype) for layer in self.layers),
            mean_image=self.mean_image.astype(dtype),
        )

    def class_name(self, class_id: int) -> str:
        if self.class_names:
            return self.class_names[class_id]
        return str(class_id)

    def preprocess(self, image: np.ndarray) -> np.ndarray:
        """Zero-centre a raw image by subtracting the stored mean."""
        return (np.asarray(image) - self.mean_image).astype(self.dtype)


def _layer_astype(layer, dtype):
    if isinstance(layer, Conv):
        return Conv(layer.kernel.astype(dtype))
    if isinstance(layer, FullyConnected):
        return FullyConnected(layer.weights.astype(dtype), layer.bias.astype(dtype))
    return layer


def layer_output_shape(layer, shape):
    if isinstance(layer, Conv):
        return T.conv_output_shape(shape, layer.kernel)
    if isinstance(layer, MaxPool):
        return T.pool_output_shape(shape, layer.spec)
    if isinstance(layer, FullyConnected):
        d = int(np.prod(shape[1:]))
        if d != layer.weights.shape[1]:
            raise ShapeError(
                f"fc layer expects {layer.weights.shape[1]} inputs, got shape {tuple(shape)}"
            )
        return shape[0], layer.weights.shape[0], 1, 1
    return tuple(shape)


@dataclass
class ForwardTrace:
    """Per-layer inputs ``X_n`` and pooling switches of one forward pass.

    ``inputs[n]`` is the input of ``layers[n]``; ``inputs[0]`` is the image.
    ``output`` is the output of the last traced layer.
    """

    layers: tuple
    inputs: list
    switches: dict
    output: np.ndarray

    def __len__(self):
        return len(self.inputs)

    def activation(self, n: int) -> np.ndarray:
        """Input of layer ``n``; ``n == len(self)`` gives the final output."""
        return self.output if n == len(self.inputs) else self.inputs[n]


def apply_layer(layer, x):
    """Forward one layer; returns ``(y, switches or None)``."""
    if isinstance(layer, Conv):
        return T.conv_forward(x, layer.kernel), None
    if isinstance(layer, ReLU):
        return T.relu_forward(x), None
    if isinstance(layer, MaxPool):
        return T.maxpool_forward(x, layer.spec)
    if isinstance(layer, FullyConnected):
        return T.fc_forward(x, layer.weights, layer.bias), None
    if isinstance(layer, Softmax):
        n, m = x.shape[:2]
        return T.softmax(x.reshape(n, m)).reshape(x.shape), None
    raise TypeError(f"unknown layer {layer!r}")


def _as_batch(net: Network, image: np.ndarray) -> np.ndarray:
    x = np.asarray(image, dtype=net.dtype)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != net.input_shape:
        raise ShapeError(f"image shape {x.shape[1:]} does not match network input {net.input_shape}")
    return x


def forward(net: Network, image: np.ndarray):
    """Class scores ``S_c`` of a zero-centred image or batch, plus the trace.

    ``image`` is ``(c, h, w)`` or ``(n, c, h, w)``; scores are ``(n, classes)``
    and always pre-softmax.
    """
    x = _as_batch(net, image)
    layers = net.score_layers
    inputs, switches = [], {}
    for n, layer in enumerate(layers):
        inputs.append(x)
        x, sw = apply_layer(layer, x)
        if sw is not None:
            switches[n] = sw
    trace = ForwardTrace(layers, inputs, switches, x)
    return x.reshape(x.shape[0], -1), trace


def predict_proba(net: Network, image: np.ndarray) -> np.ndarray:
    scores, _ = forward(net, image)
    return T.softmax(scores)


def backward_step(layer, n: int, trace: ForwardTrace, dy: np.ndarray) -> np.ndarray:
    """Gradient at the input of layer ``n`` given the gradient at its output."""
    x = trace.inputs[n]
    if isinstance(layer, Conv):
        return T.conv_backward_input(dy, layer.kernel, x.shape)
    if isinstance(layer, ReLU):
        return T.relu_backward(dy, x)
    if isinstance(layer, MaxPool):
        return T.maxpool_backward(dy, trace.switches[n], x.shape)
    if isinstance(layer, FullyConnected):
        return T.fc_backward_input(dy, layer.weights, x.shape)
    raise ValueError(f"no backward rule for layer {n} ({layer.kind})")


def backward(trace: ForwardTrace, seed: np.ndarray, top: int | None = None) -> list:
    """Reverse-mode pass from the output of layer ``top - 1`` down to the input.

    ``seed`` is the gradient at the output of layer ``top - 1`` (default: the
    score layer).  Returns ``[dX_0, ..., dX_top]`` where ``dX_top`` is the seed.
    """
    top = len(trace) if top is None else top
    expected = trace.activation(top).shape
    seed = np.asarray(seed, dtype=trace.output.dtype)
    if seed.shape != expected:
        seed = seed.reshape(expected) if seed.size == np.prod(expected) else seed
    if seed.shape != expected:
        raise ShapeError(f"seed shape {seed.shape} does not match layer output {expected}")
    grads = [seed]
    g = seed
    for n in range(top - 1, -1, -1):
        g = backward_step(trace.layers[n], n, trace, g)
        grads.append(g)
    return grads[::-1]


def score_seed(net: Network, class_id: int, batch: int = 1, dtype=None) -> np.ndarray:
    if not 0 <= class_id < net.num_classes:
        raise IndexError(f"class {class_id} out of range for {net.num_classes} classes")
    seed = np.zeros((batch, net.num_classes, 1, 1), dtype=dtype or net.dtype)
    seed[:, class_id] = 1
    return seed


def input_gradient(net: Network, image: np.ndarray, class_id: int) -> np.ndarray:
    """``dS_c/dI`` at ``image`` via one backward pass; same shape as ``image``."""
    seed = score_seed(net, class_id)
    x = np.asarray(image)
    _, trace = forward(net, x)
    grad = backward(trace, seed)[0]
    return grad[0] if x.ndim == 3 else grad


# -- construction ---------------------------------------------------------------


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


def conv_layer(
    rng, in_ch, out_ch, size=3, stride=1, padding=1, bias=0.1, dtype=np.float32
) -> Conv:
    # a positive bias keeps units alive at the zero image, where class-model ascent starts
    w = glorot_uniform(
        rng, (out_ch, in_ch, size, size), in_ch * size * size, out_ch * size * size, dtype
    )
    return Conv(ConvKernel(w, np.full(out_ch, bias, dtype=dtype), stride, padding))


def fc_layer(rng, n_in, n_out, dtype=np.float32) -> FullyConnected:
    return FullyConnected(
        glorot_uniform(rng, (n_out, n_in), n_in, n_out, dtype), np.zeros(n_out, dtype=dtype)
    )


def reference_network(
    num_classes: int,
    input_shape=(3, 32, 32),
    seed: int = 0,
    mean_image: np.ndarray | None = None,
    class_names: Sequence[str] = (),
    dtype=np.float32,
) -> Network:
    """conv8-relu-pool2-conv16-relu-pool2-fc64-relu-fc{C}, Glorot-initialised."""
    rng = np.random.default_rng(seed)
    c, h, w = input_shape
    layers = [
        conv_layer(rng, c, 8, dtype=dtype),
        ReLU(),
        MaxPool(PoolSpec((2, 2), 2)),
        conv_layer(rng, 8, 16, dtype=dtype),
        ReLU(),
        MaxPool(PoolSpec((2, 2), 2)),
        fc_layer(rng, 16 * (h // 4) * (w // 4), 64, dtype),
        ReLU(),
        fc_layer(rng, 64, num_classes, dtype),
    ]
    if mean_image is None:
        mean_image = np.zeros(input_shape, dtype=dtype)
    return Network(tuple(layers), mean_image.astype(dtype), tuple(class_names))


# -- training -------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 10
    batch: int = 32
    seed: int = 42


def cross_entropy(scores: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its gradient with respect to the scores."""
    z = scores.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1
    return loss, (d / n).astype(scores.dtype)


def parameter_gradients(net: Network, x: np.ndarray, labels: np.ndarray):
    """Loss, per-layer ``(dW, db)`` (None for parameter-free layers) and scores."""
    scores, trace = forward(net, x)
    loss, dscores = cross_entropy(scores, labels)
    g = dscores.reshape(trace.output.shape)
    grads = [None] * len(trace.layers)
    for n in range(len(trace.layers) - 1, -1, -1):
        layer = trace.layers[n]
        xin = trace.inputs[n]
        if isinstance(layer, Conv):
            grads[n] = T.conv_backward_params(g, xin, layer.kernel)
        elif isinstance(layer, FullyConnected):
            gf = g.reshape(g.shape[0], -1)
            grads[n] = (gf.T @ xin.reshape(xin.shape[0], -1), gf.sum(axis=0))
        if n > 0:
            g = backward_step(layer, n, trace, g)
    return loss, grads, scores


def _params(layer):
    if isinstance(layer, Conv):
        return layer.kernel.weights, layer.kernel.bias
    if isinstance(layer, FullyConnected):
        return layer.weights, layer.bias
    return None


def _with_params(layer, w, b):
    if isinstance(layer, Conv):
        return Conv(ConvKernel(w, b, layer.kernel.stride, layer.kernel.padding))
    return FullyConnected(w, b)


def train_sgd(
    net: Network,
    images: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig = TrainConfig(),
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> Network:
    """Minibatch SGD with heavy-ball momentum on softmax cross-entropy.

    ``images`` are raw; they are centred with ``net.mean_image``.  The mean and
    any trailing softmax layer are left untouched.  ``on_epoch(epoch, loss,
    accuracy)`` receives the epoch-mean loss and training accuracy.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images but {len(labels)} labels")
    if labels.min() < 0 or labels.max() >= net.num_classes:
        raise ValueError(f"labels must lie in [0, {net.num_classes}), got max {labels.max()}")
    x_all = net.preprocess(images)
    rng = np.random.default_rng(config.seed)
    layers = list(net.layers)
    velocity = {
        n: (np.zeros_like(p[0]), np.zeros_like(p[1]))
        for n, layer in enumerate(layers)
        if (p := _params(layer)) is not None
    }
    lr = np.asarray(config.lr, dtype=net.dtype)
    mu = np.asarray(config.momentum, dtype=net.dtype)
    for epoch in range(config.epochs):
        order = rng.permutation(len(x_all))
        total, correct = 0.0, 0
        for start in range(0, len(order), config.batch):
            idx = order[start : start + config.batch]
            current = replace(net, layers=tuple(layers))
            loss, grads, scores = parameter_gradients(current, x_all[idx], labels[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch offset {start}")
            total += loss * len(idx)
            correct += int((scores.argmax(axis=1) == labels[idx]).sum())
            for n, (vw, vb) in velocity.items():
                dw, db = grads[n]
                vw *= mu
                vw -= lr * dw.astype(vw.dtype)
                vb *= mu
                vb -= lr * db.astype(vb.dtype)
                w, b = _params(layers[n])
                layers[n] = _with_params(layers[n], w + vw, b + vb)
        mean_loss = total / len(x_all)
        acc = correct / len(x_all)
        log.info("epoch %d loss %.6f acc %.4f", epoch, mean_loss, acc)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss, acc)
    return replace(net, layers=tuple(layers))


def evaluate(net: Network, images: np.ndarray, labels: np.ndarray, batch: int = 256):
    """Mean cross-entropy and accuracy of ``net`` on raw images."""
    x_all = net.preprocess(images)
    total, correct = 0.0, 0
    for start in range(0, len(x_all), batch):
        scores, _ = forward(net, x_all[start : start + batch])
        y = np.asarray(labels[start : start + batch])
        loss, _ = cross_entropy(scores, y)
        total += loss * len(y)
        correct += int((scores.argmax(axis=1) == y).sum())
    return total / len(x_all), correct / len(x_all)

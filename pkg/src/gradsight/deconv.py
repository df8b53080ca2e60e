"""DeconvNet reconstruction versus gradient back-propagation.

Both descents start from a one-hot seed on a chosen neuron and walk the layer
stack down to the input.  They differ only in the rule used per layer:

=========  ==================================  ==============================
layer      gradient                            DeconvNet
=========  ==================================  ==============================
conv       scatter through the kernel          convolve with flipped kernel
ReLU       gate by ``X_n > 0``                 gate by ``R_{n+1} > 0``
max-pool   route to the argmax cell            unpool through the switches
fc         ``W^T dy``                          ``W^T R``
=========  ==================================  ==============================

Neither pass uses biases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gradsight import network
from gradsight import tensor as T
from gradsight.network import Conv, ForwardTrace, FullyConnected, MaxPool, Network, ReLU, Softmax
from gradsight.tensor import ShapeError

DIFF_TOL = 1e-6


@dataclass
class ReconTrace:
    """Signals ``recon[n]`` at the input of layer ``n``; ``recon[top]`` is the seed."""

    rule: str  # "grad" or "deconv"
    recon: list
    forward_trace: ForwardTrace
    top: int
    switch_log: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.recon)


def _check_path(net: Network, trace: ForwardTrace, top: int | None) -> int:
    top = len(trace) if top is None else top
    for n, layer in enumerate(net.layers[:top]):
        if isinstance(layer, Softmax):
            raise ValueError(f"layer {n} (softmax) has no reconstruction rule")
    if not 0 <= top <= len(trace):
        raise ValueError(f"top {top} outside the traced range [0, {len(trace)}]")
    return top


def neuron_seed(trace: ForwardTrace, layer: int | None = None, index: int = 0) -> tuple[np.ndarray, int]:
    """One-hot seed on flat ``index`` of the output of ``layer`` (default: last).

    Returns ``(seed, top)`` where ``top = layer + 1`` is the descent start.
    """
    top = len(trace) if layer is None else layer + 1
    shape = trace.activation(top).shape
    seed = np.zeros(shape, dtype=trace.output.dtype)
    flat = seed.reshape(-1)
    if not 0 <= index < flat.size:
        raise IndexError(f"neuron index {index} out of range for layer output {shape}")
    flat[index] = 1
    return seed, top


def _check_seed(trace, seed, top):
    expected = trace.activation(top).shape
    seed = np.asarray(seed, dtype=trace.output.dtype)
    if seed.shape != expected:
        raise ShapeError(f"seed shape {seed.shape} does not match layer output {expected}")
    return seed


def deconv_step(layer, n: int, trace: ForwardTrace, r: np.ndarray) -> np.ndarray:
    x_shape = trace.inputs[n].shape
    if isinstance(layer, Conv):
        return T.conv_transpose_flipped(r, layer.kernel, x_shape)
    if isinstance(layer, ReLU):
        return T.relu_forward(r)
    if isinstance(layer, MaxPool):
        return T.maxpool_backward(r, trace.switches[n], x_shape)
    if isinstance(layer, FullyConnected):
        return T.fc_backward_input(r, layer.weights, x_shape)
    raise ValueError(f"layer {n} ({layer.kind}) has no reconstruction rule")


def deconv_reconstruct(net: Network, trace: ForwardTrace, seed: np.ndarray, top: int | None = None) -> ReconTrace:
    top = _check_path(net, trace, top)
    seed = _check_seed(trace, seed, top)
    recon = [seed]
    log = {}
    r = seed
    for n in range(top - 1, -1, -1):
        layer = trace.layers[n]
        if isinstance(layer, MaxPool):
            log[n] = trace.switches[n]
        r = deconv_step(layer, n, trace, r)
        recon.append(r)
    return ReconTrace("deconv", recon[::-1], trace, top, log)


def grad_reconstruct(net: Network, trace: ForwardTrace, seed: np.ndarray, top: int | None = None) -> ReconTrace:
    top = _check_path(net, trace, top)
    seed = _check_seed(trace, seed, top)
    grads = network.backward(trace, seed, top)
    log = {n: trace.switches[n] for n in range(top) if isinstance(trace.layers[n], MaxPool)}
    return ReconTrace("grad", grads, trace, top, log)


@dataclass
class LayerReport:
    index: int
    kind: str
    max_abs_diff: float  # of this layer's rule applied to the shared upstream signal
    diff_coords: np.ndarray  # (k, 4) coordinates where the rules disagree
    global_max_abs_diff: float  # between the two full descents at this layer's input
    grad_mask: np.ndarray | None = None  # ReLU only: 1(X_n > 0)
    deconv_mask: np.ndarray | None = None  # ReLU only: 1(R_{n+1} > 0)

    @property
    def n_diffs(self) -> int:
        return len(self.diff_coords)

    @property
    def disagreement(self) -> np.ndarray | None:
        if self.grad_mask is None:
            return None
        return self.grad_mask != self.deconv_mask

    @property
    def ok(self) -> bool:
        if self.n_diffs == 0:
            return True
        if self.kind != "relu":
            return False
        dis = self.disagreement
        return bool(all(dis[tuple(c)] for c in self.diff_coords))

    def line(self) -> str:
        return f"{self.index} {self.kind} {self.max_abs_diff:.6e} {self.n_diffs}"


@dataclass
class EquivalenceReport:
    layers: list

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.layers)

    def to_text(self) -> str:
        return "\n".join(r.line() for r in self.layers) + "\n"


def compare(grad: ReconTrace, deconv: ReconTrace, tol: float = DIFF_TOL) -> EquivalenceReport:
    """Layer-by-layer agreement of the two reconstruction rules.

    For each layer, the DeconvNet rule is applied to the gradient signal
    arriving from above, so every row isolates that one layer's rule; a ReLU
    difference then sits exactly where the two gating masks disagree.  The
    disagreement of the full descents is reported alongside.
    """
    if grad.top != deconv.top or len(grad) != len(deconv):
        raise ShapeError(f"traces cover different layers ({grad.top} vs {deconv.top})")
    for n, (g, r) in enumerate(zip(grad.recon, deconv.recon)):
        if g.shape != r.shape:
            raise ShapeError(f"layer {n}: trace shapes {g.shape} and {r.shape} differ")
    ftrace = grad.forward_trace
    reports = []
    for n in range(grad.top):
        layer = ftrace.layers[n]
        upstream = grad.recon[n + 1].astype(np.float64)
        local = deconv_step(layer, n, deconv.forward_trace, upstream)
        delta = np.abs(local - grad.recon[n])
        coords = np.argwhere(delta > tol)
        global_delta = float(np.abs(deconv.recon[n].astype(np.float64) - grad.recon[n]).max(initial=0.0))
        rep = LayerReport(n, layer.kind, float(delta.max(initial=0.0)), coords, global_delta)
        if isinstance(layer, ReLU):
            rep.grad_mask = ftrace.inputs[n] > 0
            rep.deconv_mask = upstream > 0
        reports.append(rep)
    return EquivalenceReport(reports)


def check_equivalence(net: Network, image: np.ndarray, class_id: int):
    """Run both descents from the class score of ``image`` in double precision."""
    net64 = net.astype(np.float64)
    _, trace = network.forward(net64, image)
    seed, top = neuron_seed(trace, None, class_id)
    g = grad_reconstruct(net64, trace, seed, top)
    d = deconv_reconstruct(net64, trace, seed, top)
    return compare(g, d), g, d

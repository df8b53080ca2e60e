"""Slow, obviously-correct reference implementations used only by the tests."""

from __future__ import annotations

import itertools

import numpy as np

from gradsight import network as N
from gradsight.network import Conv, FullyConnected, MaxPool, ReLU
from gradsight.tensor import ConvKernel, PoolSpec


def naive_conv(x, w, b, stride=1, pad=0):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for a in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = b[oc]
                    for ic in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[a, ic, i * stride + u, j * stride + v] * w[oc, ic, u, v]
                    out[a, oc, i, j] = acc
    return out


def naive_pool(x, ph, pw, stride):
    n, c, h, w = x.shape
    ho, wo = (h - ph) // stride + 1, (w - pw) // stride + 1
    out = np.zeros((n, c, ho, wo))
    sw = np.zeros((n, c, ho, wo), dtype=np.int64)
    for a in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    best, arg = -np.inf, None
                    for u in range(ph):
                        for v in range(pw):
                            val = x[a, ch, i * stride + u, j * stride + v]
                            if val > best:
                                best, arg = val, (i * stride + u) * w + j * stride + v
                    out[a, ch, i, j] = best
                    sw[a, ch, i, j] = arg
    return out, sw


def central_diff(f, x, h=1e-3):
    """Central differences of scalar ``f`` at every coordinate of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    for i in range(x.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return g


def rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor), initial=0.0))


def batched_score_fd(net, image, class_id, h=1e-3):
    """Central differences of ``S_c`` at each pixel, plus a validity mask.

    A coordinate is valid when both perturbed images stay on the same linear
    piece as ``image`` (no ReLU kink or pooling tie crossed).
    """
    return batched_activation_fd(net, image, len(net.score_layers) - 1, class_id, h)


def batched_activation_fd(net, image, layer, index, h=1e-3):
    """As :func:`batched_score_fd` for flat ``index`` of the output of ``layer``."""
    x = np.asarray(image, dtype=np.float64)
    d = x.size
    eye = np.eye(d).reshape(d, *x.shape) * h
    batch = np.concatenate([x[None] + eye, x[None] - eye])
    _, trace = N.forward(net, batch)
    out = trace.activation(layer + 1).reshape(2 * d, -1)[:, index]
    fd = (out[:d] - out[d:]) / (2 * h)
    _, base = N.forward(net, x)
    valid = np.ones(d, dtype=bool)
    for n, layer_obj in enumerate(trace.layers[: layer + 1]):
        if isinstance(layer_obj, ReLU):
            gate = trace.inputs[n] > 0
            ref = base.inputs[n] > 0
        elif isinstance(layer_obj, MaxPool):
            gate = trace.switches[n]
            ref = base.switches[n]
        else:
            continue
        same = (gate == ref).reshape(2 * d, -1).all(axis=1)
        valid &= same[:d] & same[d:]
    return fd.reshape(x.shape), valid.reshape(x.shape)


def random_network(rng, relu=True, conv_only=False, fc=True, max_side=9):
    """A small random float64 network mixing conv, ReLU, max-pool and fc layers."""
    c = int(rng.integers(1, 4))
    side = int(rng.integers(6, max_side + 1))
    shape = (1, c, side, side)
    layers = []
    n_blocks = int(rng.integers(1, 3))
    for _ in range(n_blocks):
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, k))
        out = int(rng.integers(1, 4))
        if shape[2] + 2 * pad < k:
            continue
        w = rng.normal(0, 0.7, size=(out, shape[1], k, k))
        b = rng.normal(0, 0.3, size=out)
        layer = Conv(ConvKernel(w, b, stride, pad))
        layers.append(layer)
        shape = N.layer_output_shape(layer, shape)
        if relu and not conv_only:
            layers.append(ReLU())
        if not conv_only and shape[2] >= 2 and rng.random() < 0.8:
            win = int(rng.integers(2, min(3, shape[2]) + 1))
            pool = MaxPool(PoolSpec((win, win), int(rng.integers(1, 3))))
            layers.append(pool)
            shape = N.layer_output_shape(pool, shape)
    if fc:
        d = int(np.prod(shape[1:]))
        hidden = int(rng.integers(2, 6))
        layers.append(FullyConnected(rng.normal(0, 0.5, (hidden, d)), rng.normal(0, 0.2, hidden)))
        if relu and not conv_only:
            layers.append(ReLU())
        layers.append(FullyConnected(rng.normal(0, 0.5, (3, hidden)), rng.normal(0, 0.2, 3)))
    else:
        d = int(np.prod(shape[1:]))
        layers.append(FullyConnected(rng.normal(0, 0.5, (3, d)), rng.normal(0, 0.2, 3)))
    return N.Network(tuple(layers), np.zeros((c, side, side)))


def brute_force_min_cut(g, fixed=None):
    """Minimum s-t cut capacity over all 2^n source-side subsets.

    ``fixed`` optionally maps node -> side to restrict the enumeration.
    """
    fixed = fixed or {}
    free = [v for v in range(g.n) if v not in fixed]
    best, best_side = np.inf, None
    for bits in itertools.product((False, True), repeat=len(free)):
        side = dict(fixed)
        side.update(zip(free, bits))
        total = 0.0
        for v in range(g.n):
            total += g.sink_cap[v] if side[v] else g.source_cap[v]
        for (u, v), c_uv, c_vu in zip(g.edges.tolist(), g.edge_cap, g.edge_rev_cap):
            if side[u] and not side[v]:
                total += c_uv
            elif side[v] and not side[u]:
                total += c_vu
        if total < best:
            best, best_side = total, side
    return best, best_side

"""Class model images: gradient ascent on the L2-regularised class score.

The optimisation starts from the zero image, i.e. in the zero-centred input
space; :func:`display_image` adds the training mean back.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from gradsight import network
from gradsight import tensor as T
from gradsight.network import Network


class Mode(str, Enum):
    RAW_SCORE = "raw"
    POSTERIOR = "posterior"


class SynthesisError(FloatingPointError):
    pass


@dataclass(frozen=True)
class VizConfig:
    """Ascent settings.

    The defaults suit the reference network on 32x32 inputs; none of them
    come from a published configuration.  The effective step is capped at
    ``1/(2*lam)``: past that the regulariser alone makes the fixed-step
    iteration overshoot, and for large ``lam`` it would diverge.
    """

    lam: float = 0.05
    steps: int = 200
    step_size: float = 0.02
    momentum: float = 0.9
    mode: Mode = Mode.RAW_SCORE
    restarts: int = 0  # extra random starts besides the zero image
    seed: int = 42

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


def _raw_objective(net, image, class_id, lam):
    _, trace = network.forward(net, image)
    seed = network.score_seed(net, class_id)
    grad = network.backward(trace, seed)[0][0]
    score = float(trace.output.reshape(-1)[class_id])
    return score - lam * float(np.sum(image.astype(np.float64) ** 2)), grad - 2 * lam * image


def _posterior_objective(net, image, class_id, lam):
    scores, trace = network.forward(net, image)
    p = T.softmax(scores[0].astype(np.float64))
    # d log P_c / dS = onehot(c) - P
    seed = -p
    seed[class_id] += 1
    grad = network.backward(trace, seed.reshape(trace.output.shape))[0][0]
    logp = float(np.log(p[class_id]))
    return logp - lam * float(np.sum(image.astype(np.float64) ** 2)), grad - 2 * lam * image


def _ascend(net, class_id, cfg, start):
    objective = _raw_objective if Mode(cfg.mode) is Mode.RAW_SCORE else _posterior_objective
    image = start.astype(net.dtype)
    velocity = np.zeros_like(image)
    value, grad = objective(net, image, class_id, cfg.lam)
    eta = min(cfg.step_size, 0.5 / cfg.lam) if cfg.lam > 0 else cfg.step_size
    trace = []
    for step in range(cfg.steps):
        velocity = cfg.momentum * velocity + eta * grad
        image = (image + velocity).astype(net.dtype)
        # overflow is caught below as a non-finite objective
        with np.errstate(over="ignore", invalid="ignore"):
            value, grad = objective(net, image, class_id, cfg.lam)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise SynthesisError(f"objective became non-finite at step {step}")
        trace.append(value)
    return image, np.array(trace)


def synthesize_class_image(net: Network, class_id: int, cfg: VizConfig = VizConfig()):
    """Zero-centred class image and the per-step objective values.

    ``trace[k]`` is the objective after ascent step ``k``.  With restarts the
    run with the best final objective wins.
    """
    if not 0 <= class_id < net.num_classes:
        raise IndexError(f"class {class_id} out of range for {net.num_classes} classes")
    best = _ascend(net, class_id, cfg, np.zeros(net.input_shape))
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.restarts):
        candidate = _ascend(net, class_id, cfg, rng.normal(0, 0.1, size=net.input_shape))
        if candidate[1][-1] > best[1][-1]:
            best = candidate
    return best


def synthesize_posterior_mode(net: Network, class_id: int, cfg: VizConfig = VizConfig()):
    """As :func:`synthesize_class_image` but ascending ``log P_c``."""
    return synthesize_class_image(net, class_id, replace(cfg, mode=Mode.POSTERIOR))


def display_image(net: Network, image: np.ndarray) -> np.ndarray:
    """Add the training mean back to a zero-centred image."""
    return image.astype(np.float64) + net.mean_image

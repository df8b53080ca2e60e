"""Image-specific class saliency maps from a single input-gradient pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gradsight import network
from gradsight.network import Network


@dataclass
class SaliencyMap:
    values: np.ndarray  # (rows, cols), non-negative
    source_class: int = -1
    source_image_id: str | None = None

    @property
    def shape(self):
        return self.values.shape


def saliency_from_gradient(w: np.ndarray) -> np.ndarray:
    """Per-pixel maximum of ``|w|`` over channels; ``w`` is ``(c, h, w)``."""
    w = np.asarray(w)
    if w.ndim == 4:
        if w.shape[0] != 1:
            raise ValueError(f"expected a single image gradient, got batch of {w.shape[0]}")
        w = w[0]
    if w.ndim == 2:
        return np.abs(w)
    return np.abs(w).max(axis=0)


def class_saliency(net: Network, image: np.ndarray, class_id: int, image_id=None) -> SaliencyMap:
    """Saliency of ``class_id`` for a zero-centred ``(c, h, w)`` image."""
    w = network.input_gradient(net, image, class_id)
    return SaliencyMap(saliency_from_gradient(w), class_id, image_id)


def top1_class(net: Network, image: np.ndarray) -> int:
    return int(top_classes(net, image, 1)[0])


def top_classes(net: Network, image: np.ndarray, k: int) -> np.ndarray:
    """Class ids by descending score; equal scores keep ascending id order."""
    scores, _ = network.forward(net, image)
    return np.argsort(-scores[0], kind="stable")[:k]


@dataclass(frozen=True)
class CropSpec:
    """Square crops at ``offsets`` (row, col), each optionally also mirrored."""

    offsets: tuple
    crop_size: int
    include_reflections: bool = True

    def __post_init__(self):
        object.__setattr__(self, "offsets", tuple(tuple(o) for o in self.offsets))

    @classmethod
    def ten_crop(cls, h: int, w: int, ratio: float = 0.875) -> "CropSpec":
        """Four corners and the centre at side ``round(ratio*min(h, w))``, plus mirrors."""
        s = int(round(ratio * min(h, w)))
        offsets = ((0, 0), (0, w - s), (h - s, 0), (h - s, w - s), ((h - s) // 2, (w - s) // 2))
        return cls(offsets, s, True)

    @classmethod
    def single(cls, h: int, w: int) -> "CropSpec":
        if h != w:
            raise ValueError(f"single-crop spec needs a square image, got {h}x{w}")
        return cls(((0, 0),), h, False)

    def validate(self, h: int, w: int) -> None:
        for r, c in self.offsets:
            if r < 0 or c < 0 or r + self.crop_size > h or c + self.crop_size > w:
                raise ValueError(
                    f"crop at {(r, c)} of size {self.crop_size} lies outside the {h}x{w} image"
                )

    def __len__(self):
        return len(self.offsets) * (2 if self.include_reflections else 1)


def resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Linear-interpolation operator (pixel-centre aligned) mapping ``n_in`` samples to ``n_out``."""
    if n_out == n_in:
        return np.eye(n_out)
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    r = np.zeros((n_out, n_in))
    np.add.at(r, (np.arange(n_out), lo), 1 - frac)
    np.add.at(r, (np.arange(n_out), hi), frac)
    return r


def _crop_gradient(net: Network, crop: np.ndarray, class_id: int) -> np.ndarray:
    """Gradient of the class score with respect to the pixels of ``crop``.

    A crop smaller than the network input is resized linearly first, and the
    gradient is pulled back through the resize so it lives at crop resolution.
    """
    c, h, w = net.input_shape
    s = crop.shape[1]
    if crop.shape[1:] == (h, w):
        return network.input_gradient(net, crop, class_id)
    rh, rw = resize_matrix(h, s), resize_matrix(w, crop.shape[2])
    resized = np.einsum("ij,cjk,lk->cil", rh, crop.astype(np.float64), rw).astype(net.dtype)
    g = network.input_gradient(net, resized, class_id).astype(np.float64)
    return np.einsum("ij,cil,lk->cjk", rh, g, rw)


def multicrop_saliency(
    net: Network, image: np.ndarray, class_id: int, crops: CropSpec | None = None, image_id=None
) -> SaliencyMap:
    """Average per-crop saliency maps over the full image grid.

    Each pixel is divided by the number of crops covering it; uncovered pixels
    are 0.  Mirrored crops are mirrored back before accumulation.
    """
    _, h, w = image.shape
    crops = crops or CropSpec.ten_crop(h, w)
    crops.validate(h, w)
    if len(crops.offsets) == 1 and not crops.include_reflections:
        (r, c), s = crops.offsets[0], crops.crop_size
        if (r, c) == (0, 0) and (s, s) == (h, w):
            return class_saliency(net, image, class_id, image_id)
    acc = np.zeros((h, w))
    cover = np.zeros((h, w))
    s = crops.crop_size
    for r, c in crops.offsets:
        crop = image[:, r : r + s, c : c + s]
        views = [(crop, False)]
        if crops.include_reflections:
            views.append((crop[:, :, ::-1], True))
        for view, mirrored in views:
            m = saliency_from_gradient(_crop_gradient(net, np.ascontiguousarray(view), class_id))
            if mirrored:
                m = m[:, ::-1]
            acc[r : r + s, c : c + s] += m
            cover[r : r + s, c : c + s] += 1
    values = np.divide(acc, cover, out=np.zeros_like(acc), where=cover > 0)
    return SaliencyMap(values, class_id, image_id)

"""Synthetic shape images with ground-truth masks and boxes.

Each image holds one bright, uniformly coloured shape on a darker textured
background; the label is the shape kind.  Pixel values are quantised to the
8-bit grid so images survive a PNM round trip unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from gradsight import pnm

SHAPES = ("square", "disk", "triangle", "cross", "diamond")


@dataclass
class Dataset:
    images: np.ndarray  # (n, 3, h, w) float32 in [0, 1]
    labels: np.ndarray  # (n,) int64
    masks: np.ndarray  # (n, h, w) bool
    boxes: np.ndarray  # (n, 4) int64: row_min, col_min, row_max, col_max (inclusive)
    class_names: tuple = SHAPES

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(
            self.images[idx], self.labels[idx], self.masks[idx], self.boxes[idx], self.class_names
        )


def mask_box(mask: np.ndarray):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    return int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])


def _shape_mask(kind, size, h, w, top, left, rng):
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    # coordinates relative to the shape centre, in units of half the size
    half = size / 2.0
    y = (rr - (top + half)) / half
    x = (cc - (left + half)) / half
    if kind == "square":
        m = (np.abs(x) <= 0.85) & (np.abs(y) <= 0.85)
    elif kind == "disk":
        m = x**2 + y**2 <= 0.95
    elif kind == "triangle":
        # apex up, base at the bottom
        m = (y <= 0.9) & (y >= -0.9) & (np.abs(x) <= (y + 0.9) / 1.8 * 0.95)
    elif kind == "cross":
        arm = 0.33
        m = ((np.abs(x) <= arm) & (np.abs(y) <= 0.95)) | ((np.abs(y) <= arm) & (np.abs(x) <= 0.95))
    elif kind == "diamond":
        m = np.abs(x) + np.abs(y) <= 0.95
    else:
        raise ValueError(f"unknown shape {kind!r}")
    labels, count = ndimage.label(m)
    if count > 1:
        sizes = ndimage.sum(m, labels, range(1, count + 1))
        m = labels == 1 + int(np.argmax(sizes))
    return m


def _background(rng, h, w):
    base = rng.uniform(0.1, 0.4, size=3)
    coarse = rng.normal(0, 1, size=(3, h // 4 + 2, w // 4 + 2))
    smooth = ndimage.zoom(coarse, (1, 4, 4), order=1)[:, :h, :w]
    fine = rng.normal(0, 1, size=(3, h, w))
    img = base[:, None, None] + 0.06 * smooth + 0.03 * fine
    return img


def _bright_colour(rng):
    c = rng.uniform(0.55, 1.0, size=3)
    c[rng.integers(3)] = rng.uniform(0.85, 1.0)
    return c


def synth_dataset(n: int, image_size: int = 32, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    h = w = image_size
    k = len(SHAPES)
    labels = rng.permutation(np.arange(n) % k).astype(np.int64)
    images = np.zeros((n, 3, h, w), dtype=np.float32)
    masks = np.zeros((n, h, w), dtype=bool)
    boxes = np.zeros((n, 4), dtype=np.int64)
    lo, hi = max(4, int(round(0.35 * image_size))), max(5, int(round(0.6 * image_size)))
    for i, label in enumerate(labels):
        size = int(rng.integers(lo, hi + 1))
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
        m = _shape_mask(SHAPES[label], size, h, w, top, left, rng)
        img = _background(rng, h, w)
        colour = _bright_colour(rng)
        shade = colour[:, None, None] + 0.02 * rng.normal(0, 1, size=(3, h, w))
        img = np.where(m[None], shade, img)
        images[i] = np.round(np.clip(img, 0, 1) * 255) / 255
        masks[i] = m
        boxes[i] = mask_box(m)
    return Dataset(images, labels, masks, boxes, SHAPES)


def save_dataset(ds: Dataset, directory) -> None:
    """Write ``images/*.ppm``, ``masks/*.pgm`` and an ``index.txt`` listing.

    Each index line is ``name label row_min col_min row_max col_max``; the
    first line is ``classes`` followed by the class names.
    """
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    lines = ["classes " + " ".join(ds.class_names)]
    for i in range(len(ds)):
        name = f"{i:06d}"
        pnm.write_image(root / "images" / f"{name}.ppm", ds.images[i])
        pnm.write_image(root / "masks" / f"{name}.pgm", ds.masks[i][None].astype(np.float32))
        box = " ".join(str(v) for v in ds.boxes[i])
        lines.append(f"{name} {ds.labels[i]} {box}")
    (root / "index.txt").write_text("\n".join(lines) + "\n")


def load_dataset(directory) -> Dataset:
    root = Path(directory)
    index = root / "index.txt"
    if not index.is_file():
        raise FileNotFoundError(f"no dataset index at {index}")
    lines = index.read_text().splitlines()
    if not lines or not lines[0].startswith("classes"):
        raise ValueError(f"{index}: missing 'classes' header")
    class_names = tuple(lines[0].split()[1:])
    images, labels, masks, boxes = [], [], [], []
    for line in lines[1:]:
        if not line.strip():
            continue
        name, label, *box = line.split()
        images.append(pnm.read_image(root / "images" / f"{name}.ppm"))
        masks.append(pnm.read_image(root / "masks" / f"{name}.pgm")[0] > 0.5)
        labels.append(int(label))
        boxes.append([int(v) for v in box])
    if not images:
        return Dataset(
            np.zeros((0, 3, 0, 0), np.float32),
            np.zeros(0, np.int64),
            np.zeros((0, 0, 0), bool),
            np.zeros((0, 4), np.int64),
            class_names,
        )
    return Dataset(
        np.stack(images).astype(np.float32),
        np.asarray(labels, dtype=np.int64),
        np.stack(masks),
        np.asarray(boxes, dtype=np.int64),
        class_names,
    )

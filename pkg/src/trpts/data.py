"""Seeded synthetic image-classification tasks, three families deep.

shape-class:    which glyph is drawn (square, disk, cross, triangle, ...)
quadrant-class: which image quadrant holds the bright blob (4 classes)
count-class:    how many blobs appear (1 .. num_classes)

Labels are exactly balanced (round-robin, then shuffled) and every split
draws from its own named substream, so splits are disjoint by
construction and byte-identical across runs for the same spec and seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from .errors import ConfigurationError
from .rng import substream

TASK_FAMILIES = ("shape-class", "quadrant-class", "count-class")
_MAX_SHAPES = 6


@dataclass(frozen=True)
class SyntheticTaskSpec:
    family: str
    image_size: int = 32
    num_classes: int = 4
    num_train: int = 2000
    num_val: int = 500
    num_test: int = 500
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.family not in TASK_FAMILIES:
            raise ConfigurationError(f"unknown task family {self.family!r}; "
                                     f"expected one of {TASK_FAMILIES}")
        if self.num_classes < 2:
            raise ConfigurationError("need at least two classes")
        if self.family == "quadrant-class" and self.num_classes != 4:
            raise ConfigurationError("quadrant-class has exactly 4 classes")
        if self.family == "shape-class" and self.num_classes > _MAX_SHAPES:
            raise ConfigurationError(f"shape-class supports at most {_MAX_SHAPES} classes")
        if self.family == "count-class" and self.num_classes > 5:
            raise ConfigurationError("count-class supports at most 5 classes")
        if min(self.num_train, self.num_val, self.num_test) < 1:
            raise ConfigurationError("every split needs at least one example")
        if self.noise < 0:
            raise ConfigurationError("noise level must be nonnegative")
        if self.image_size < 16:
            raise ConfigurationError("images smaller than 16x16 leave no room to draw")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "image_size": self.image_size,
            "num_classes": self.num_classes,
            "num_train": self.num_train,
            "num_val": self.num_val,
            "num_test": self.num_test,
            "noise": self.noise,
            "seed": self.seed,
        }


@dataclass
class Dataset:
    images: np.ndarray  # [n, S, S, 1] float32 in [0, 1]
    labels: np.ndarray  # [n] int64

    def __len__(self) -> int:
        return len(self.labels)


def generate_split(spec: SyntheticTaskSpec, split: str, size: int) -> Dataset:
    rng = substream(spec.seed, f"data-{spec.family}-{split}")
    labels = rng.permutation(np.arange(size, dtype=np.int64) % spec.num_classes)
    render = _RENDERERS[spec.family]
    images = np.empty((size, spec.image_size, spec.image_size, 1), dtype=np.float32)
    for i, label in enumerate(labels):
        clean = render(int(label), spec.image_size, rng)
        if spec.noise > 0:
            clean = np.clip(clean + rng.normal(0.0, spec.noise, clean.shape), 0.0, 1.0)
        images[i, :, :, 0] = clean.astype(np.float32)
    return Dataset(images, labels)


def generate_task(spec: SyntheticTaskSpec) -> Dict[str, Dataset]:
    return {
        "train": generate_split(spec, "train", spec.num_train),
        "val": generate_split(spec, "val", spec.num_val),
        "test": generate_split(spec, "test", spec.num_test),
    }


def _grid(size: int):
    return np.mgrid[0:size, 0:size].astype(np.float64)


def _render_shape(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = _grid(size)
    r = rng.uniform(size * 0.18, size * 0.30)
    cy = rng.uniform(r + 1, size - r - 2)
    cx = rng.uniform(r + 1, size - r - 2)
    bright = rng.uniform(0.6, 1.0)
    dy, dx = yy - cy, xx - cx
    if label == 0:  # square
        hit = (np.abs(dy) <= r) & (np.abs(dx) <= r)
    elif label == 1:  # disk
        hit = dy * dy + dx * dx <= r * r
    elif label == 2:  # cross
        bar = r / 3.0
        hit = ((np.abs(dx) <= bar) & (np.abs(dy) <= r)) | (
            (np.abs(dy) <= bar) & (np.abs(dx) <= r)
        )
    elif label == 3:  # upward triangle
        hit = (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2.0)
    elif label == 4:  # ring
        dist2 = dy * dy + dx * dx
        hit = (dist2 <= r * r) & (dist2 >= (r / 2.0) ** 2)
    else:  # diamond
        hit = np.abs(dy) + np.abs(dx) <= r
    return np.where(hit, bright, 0.0)


def _render_quadrant(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = _grid(size)
    half = size / 2.0
    margin = size * 0.12
    row, col = divmod(label, 2)
    cy = rng.uniform(row * half + margin, (row + 1) * half - margin)
    cx = rng.uniform(col * half + margin, (col + 1) * half - margin)
    sigma = rng.uniform(size * 0.06, size * 0.12)
    bright = rng.uniform(0.7, 1.0)
    blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma * sigma))
    return bright * blob


def _render_count(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = _grid(size)
    img = np.zeros((size, size))
    count = label + 1
    centers = []
    radius = size * 0.09
    attempts = 0
    while len(centers) < count:
        cy = rng.uniform(radius + 1, size - radius - 2)
        cx = rng.uniform(radius + 1, size - radius - 2)
        if all((cy - oy) ** 2 + (cx - ox) ** 2 > (2.4 * radius) ** 2 for oy, ox in centers):
            centers.append((cy, cx))
        attempts += 1
        if attempts > 1000:  # dense boards at high counts; restart placement
            centers.clear()
            attempts = 0
    bright = rng.uniform(0.6, 1.0)
    for cy, cx in centers:
        hit = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
        img = np.maximum(img, np.where(hit, bright, 0.0))
    return img


_RENDERERS = {
    "shape-class": _render_shape,
    "quadrant-class": _render_quadrant,
    "count-class": _render_count,
}

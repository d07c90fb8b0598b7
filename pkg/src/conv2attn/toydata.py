"""Seeded synthetic dataset for the two-phase training demo.

Each image is Gaussian noise plus a class-specific template stamped at a
random position, plus a fixed number of distractor dots. Templates have
distinct total masses (pixel count times amplitude), so the task is
learnable by a linear read-out of pooled features, while the distractors
and noise keep naive template matching imperfect.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._arrays import frozen_array
from .errors import InvalidArgumentError

GENERATOR_VERSION = 1

_TEMPLATE_GRIDS = (
    # pixel counts 3, 5, 7, 9, 11, 13, 14, 16
    ((1, 1), (1, 0)),
    ((0, 1, 0), (1, 1, 1), (0, 1, 0)),
    ((1, 0, 1), (1, 0, 1), (1, 1, 1)),
    ((1, 1, 1), (1, 1, 1), (1, 1, 1)),
    ((1, 1, 1, 1), (1, 0, 0, 1), (1, 0, 0, 0), (1, 1, 1, 1)),
    ((1, 1, 1, 1), (1, 1, 0, 1), (1, 0, 0, 1), (1, 1, 1, 1)),
    ((0, 1, 1, 0), (1, 1, 1, 1), (1, 1, 1, 1), (1, 1, 1, 1)),
    ((1, 1, 1, 1), (1, 1, 1, 1), (1, 1, 1, 1), (1, 1, 1, 1)),
)

# Per-class stamp mass, equally spaced so pooled intensity separates classes.
_TARGET_MASSES = (6.0, 16.0, 26.0, 36.0, 46.0, 56.0, 66.0, 76.0)

MAX_CLASSES = len(_TEMPLATE_GRIDS)

DEFAULT_NOISE = 0.3
DEFAULT_DISTRACTORS = 2
_DISTRACTOR_SIZE = 2
_DISTRACTOR_VALUE = 1.5
_VAL_FRACTION = 0.25


def class_templates(num_classes: int) -> list[tuple[np.ndarray, float]]:
    """The (binary mask, amplitude) pairs used for the first `num_classes`
    classes; amplitudes scale each mask to its target total mass."""
    if not 2 <= num_classes <= MAX_CLASSES:
        raise InvalidArgumentError(
            f"number of classes must be in [2, {MAX_CLASSES}], got {num_classes}"
        )
    out = []
    for grid, mass in zip(_TEMPLATE_GRIDS[:num_classes], _TARGET_MASSES):
        mask = np.array(grid, dtype=np.float64)
        out.append((mask, mass / mask.sum()))
    return out


@dataclass(frozen=True)
class ToyDataset:
    """Seeded image/label arrays with a deterministic train/val split."""

    images: np.ndarray
    labels: np.ndarray
    train_indices: np.ndarray
    val_indices: np.ndarray
    num_classes: int
    seed: int

    def __post_init__(self) -> None:
        images = frozen_array(self.images, name="dataset images")
        labels = np.array(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        if images.ndim != 4:
            raise InvalidArgumentError(
                f"images must be (samples, H, W, C), got shape {images.shape}"
            )
        if labels.shape != (images.shape[0],):
            raise InvalidArgumentError("labels must have one entry per image")
        for name, idx in (("train", self.train_indices), ("val", self.val_indices)):
            arr = np.array(idx, dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, f"{name}_indices", arr)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    @property
    def train_images(self) -> np.ndarray:
        return self.images[self.train_indices]

    @property
    def train_labels(self) -> np.ndarray:
        return self.labels[self.train_indices]

    @property
    def val_images(self) -> np.ndarray:
        return self.images[self.val_indices]

    @property
    def val_labels(self) -> np.ndarray:
        return self.labels[self.val_indices]


def generate_toy_dataset(
    seed: int,
    samples: int,
    height: int,
    width: int,
    channels: int,
    num_classes: int,
    noise: float = DEFAULT_NOISE,
    distractors: int = DEFAULT_DISTRACTORS,
) -> ToyDataset:
    """Generate a balanced, seeded localized-pattern classification set.

    Class labels are assigned round-robin (balance within one sample), the
    sample order is then shuffled, and the last quarter becomes the
    validation split. Bit-identical for identical arguments.
    """
    templates = class_templates(num_classes)
    if samples < num_classes:
        raise InvalidArgumentError(
            f"need at least one sample per class, got {samples} for {num_classes}"
        )
    if channels < 1:
        raise InvalidArgumentError(f"channels must be >= 1, got {channels}")
    footprint = max(t.shape[0] for t, _ in templates)
    if height < footprint or width < footprint:
        raise InvalidArgumentError(
            f"images must be at least {footprint} x {footprint}, got {height} x {width}"
        )
    if noise < 0:
        raise InvalidArgumentError(f"noise level must be >= 0, got {noise}")
    if distractors < 0:
        raise InvalidArgumentError(f"distractor count must be >= 0, got {distractors}")

    rng = np.random.default_rng(seed)
    labels = np.arange(samples, dtype=np.int64) % num_classes
    images = rng.normal(0.0, noise, size=(samples, height, width, channels))

    dot = np.full((_DISTRACTOR_SIZE, _DISTRACTOR_SIZE), _DISTRACTOR_VALUE)
    for m in range(samples):
        mask, amplitude = templates[labels[m]]
        th, tw = mask.shape
        for _ in range(distractors):
            r = int(rng.integers(0, height - _DISTRACTOR_SIZE + 1))
            c = int(rng.integers(0, width - _DISTRACTOR_SIZE + 1))
            images[m, r : r + _DISTRACTOR_SIZE, c : c + _DISTRACTOR_SIZE] += dot[:, :, None]
        r = int(rng.integers(0, height - th + 1))
        c = int(rng.integers(0, width - tw + 1))
        images[m, r : r + th, c : c + tw] += (amplitude * mask)[:, :, None]

    order = rng.permutation(samples)
    images = images[order]
    labels = labels[order]
    split = samples - max(1, int(round(samples * _VAL_FRACTION)))
    if split < 1:
        split = samples - 1
    return ToyDataset(
        images=images,
        labels=labels,
        train_indices=np.arange(0, split),
        val_indices=np.arange(split, samples),
        num_classes=num_classes,
        seed=seed,
    )

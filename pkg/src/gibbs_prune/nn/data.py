"""Datasets: CIFAR-10 binary batches, a small synthetic stand-in, augmentation."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..rng import RandomSource, as_generator

CIFAR_RECORD = 3073
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"
DATA_ENV = "GIBBS_PRUNE_DATA"


@dataclass
class DatasetSplit:
    images: np.ndarray  # (count, H, W, channels), values in [0, 1]
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images must be (count, H, W, C) with one label per image")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError("label out of range")

    def __len__(self):
        return self.labels.size

    def subset(self, n: int) -> "DatasetSplit":
        return DatasetSplit(self.images[:n], self.labels[:n], self.classes)


def load_cifar10_binary(paths) -> DatasetSplit:
    """Parse CIFAR-10 binary batches: 1 label byte then 1024 R, G, B bytes each."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    records = []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) % CIFAR_RECORD:
            raise ValueError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
        records.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    rec = np.concatenate(records) if records else np.zeros((0, CIFAR_RECORD), np.uint8)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        raise ValueError(f"label byte {labels.max()} is outside 0..9")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1) / 255.0
    return DatasetSplit(images, labels, 10)


def cifar10_from_root(root=None, subset: int | None = None):
    root = Path(root or os.environ.get(DATA_ENV, "data"))
    if (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"
    missing = [f for f in CIFAR_TRAIN_FILES + [CIFAR_TEST_FILE] if not (root / f).exists()]
    if missing:
        raise FileNotFoundError(f"CIFAR-10 binary files missing under {root}: {missing}")
    train = load_cifar10_binary([root / f for f in CIFAR_TRAIN_FILES])
    test = load_cifar10_binary(root / CIFAR_TEST_FILE)
    if subset:
        train, test = train.subset(subset), test.subset(max(1, subset // 5))
    return train, test


def synthetic_templates(size: int = 8, amplitude: float = 0.12) -> np.ndarray:
    """Four mutually orthogonal gratings (horizontal, vertical, two diagonals)."""
    y, x = np.mgrid[0:size, 0:size]
    freq = 2 * np.pi / 4.0
    return np.stack([0.5 + amplitude * np.cos(freq * (dx * x + dy * y))
                     for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1))])


def synthetic_dataset(seed: int, per_class: int, noise: float = 0.3, size: int = 8):
    """Noisy single-channel gratings, four classes; 80/20 train/test split."""
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    gen = RandomSource(seed).child("synthetic").generator()
    templates = synthetic_templates(size)
    labels = np.repeat(np.arange(4), per_class)
    gen.shuffle(labels)
    images = templates[labels] + gen.normal(0.0, noise, (labels.size, size, size))
    images = np.clip(images, 0.0, 1.0)[..., None]
    n_train = int(round(0.8 * labels.size))
    return (DatasetSplit(images[:n_train], labels[:n_train], 4),
            DatasetSplit(images[n_train:], labels[n_train:], 4))


def nearest_template_accuracy(split: DatasetSplit, size: int = 8) -> float:
    templates = synthetic_templates(size)
    d = ((split.images[..., 0][:, None] - templates[None]) ** 2).sum(axis=(2, 3))
    return float(np.mean(d.argmin(axis=1) == split.labels))


def _shift(img, dy, dx):
    out = np.zeros_like(img)
    h, w = img.shape[:2]
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = img[ys, xs]
    return out


def augment(image, rng, shift=None, flip=None):
    """Random shift of up to 10% per axis (zero fill) and a 50% horizontal flip.

    ``shift``/``flip`` override the random choices.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    if shift is None or flip is None:
        gen = as_generator(rng)
        my, mx = int(0.1 * h), int(0.1 * w)
        draw = (int(gen.integers(-my, my + 1)), int(gen.integers(-mx, mx + 1)))
        shift = draw if shift is None else shift
        flip = bool(gen.random() < 0.5) if flip is None else flip
    out = _shift(image, *shift)
    return out[:, ::-1].copy() if flip else out


def augment_batch(images, gen: np.random.Generator):
    return np.stack([augment(img, gen) for img in images])

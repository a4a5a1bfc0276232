"""Dataset ingestion and augmentation.

Two sources are supported: the CIFAR-10 binary batch format and a
synthetic translated-motif generator used for desk-scale experiments.
Images are kept raw in [0, 1]; the per-pixel training mean travels with
the dataset and is subtracted at batch-assembly time.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError
from .tensor import make_rng

CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]
_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


@dataclass
class Dataset:
    """Images [n, c, h, w] in [0, 1], integer labels, and the training mean."""

    images: np.ndarray
    labels: np.ndarray
    mean: np.ndarray  # [c, h, w], computed on the training split

    def __post_init__(self):
        if self.images.ndim != 4:
            raise FormatError(f"images must be [n, c, h, w], got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise FormatError("labels do not match image count")
        if self.mean.shape != self.images.shape[1:]:
            raise FormatError("mean shape does not match image shape")

    def __len__(self):
        return self.images.shape[0]

    @property
    def classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0


def _read_cifar_file(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise
    if len(blob) == 0 or len(blob) % _RECORD:
        raise FormatError(
            f"{path}: size {len(blob)} is not a positive multiple of {_RECORD}"
        )
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(-1, _RECORD)
    labels = raw[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise FormatError(f"{path}: label byte {labels.max()} out of range 0-9")
    images = raw[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return images, labels


def _cifar_dir(dir_path):
    # Accept either the batch files directly or the standard subdirectory.
    if os.path.isfile(os.path.join(dir_path, CIFAR_TRAIN_FILES[0])):
        return dir_path
    sub = os.path.join(dir_path, "cifar-10-batches-bin")
    if os.path.isfile(os.path.join(sub, CIFAR_TRAIN_FILES[0])):
        return sub
    return dir_path


def load_cifar10(dir_path, split: str, dtype=np.float64) -> Dataset:
    """Load a CIFAR-10 split; the training mean is subtractable from either split.

    Records are 1 label byte followed by 3072 pixel bytes (R, G, B planes,
    row-major). Pixels are scaled by 1/255.
    """
    if split not in ("train", "test"):
        raise ParameterError(f"split must be 'train' or 'test', got {split!r}")
    base = _cifar_dir(dir_path)
    train_parts = [_read_cifar_file(os.path.join(base, f)) for f in CIFAR_TRAIN_FILES]
    train_images = np.concatenate([p[0] for p in train_parts])
    mean = train_images.mean(axis=0)
    if split == "train":
        images = train_images
        labels = np.concatenate([p[1] for p in train_parts])
    else:
        images, labels = _read_cifar_file(os.path.join(base, CIFAR_TEST_FILES[0]))
    return Dataset(images.astype(dtype), labels, mean.astype(dtype))


def make_synthetic(
    n_per_class: int,
    classes: int = 2,
    motif_size: int = 6,
    image_size: int = 12,
    noise_sigma: float = 0.1,
    seed: int = 0,
    channels: int = 1,
    dtype=np.float64,
) -> Dataset:
    """Translated-motif dataset: each class is a fixed random motif stamped
    at a uniformly random location on a noise background.

    Deterministic per seed. With ``noise_sigma`` 0 every image contains its
    class motif exactly, somewhere.
    """
    if motif_size >= image_size:
        raise ParameterError(
            f"motif size {motif_size} must be smaller than image size {image_size}"
        )
    if n_per_class < 1 or classes < 1:
        raise ParameterError("need at least one image and one class")
    rng = make_rng(seed)
    motifs = rng.uniform(0.5, 1.0, size=(classes, channels, motif_size, motif_size))
    n = n_per_class * classes
    h = w = image_size
    images = np.empty((n, channels, h, w), dtype=np.float64)
    labels = np.repeat(np.arange(classes), n_per_class)
    span = image_size - motif_size + 1
    for i in range(n):
        background = np.clip(noise_sigma * rng.standard_normal((channels, h, w)), 0.0, 1.0)
        top = int(rng.integers(0, span))
        left = int(rng.integers(0, span))
        background[:, top : top + motif_size, left : left + motif_size] = motifs[labels[i]]
        images[i] = background
    mean = images.mean(axis=0)
    return Dataset(images.astype(dtype), labels, mean.astype(dtype))


def crop_flip(image: np.ndarray, dy: int, dx: int, flip: bool, pad: int = 4) -> np.ndarray:
    """Zero-pad, crop back to the original size at offset (dy, dx), maybe flip.

    Offset (pad, pad) with no flip reproduces the original image. The flip
    is horizontal (last axis reversed).
    """
    c, h, w = image.shape
    padded = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=image.dtype)
    padded[:, pad : pad + h, pad : pad + w] = image
    out = padded[:, dy : dy + h, dx : dx + w]
    if flip:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def augment_batch(batch: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random-crop-and-flip augmentation, one independent draw per image.

    Per image: a uniform crop offset in [0, 2*pad]^2 of the zero-padded
    image and a 0.5-probability horizontal flip.
    """
    out = np.empty_like(batch)
    for i, image in enumerate(batch):
        dy = int(rng.integers(0, 2 * pad + 1))
        dx = int(rng.integers(0, 2 * pad + 1))
        flip = bool(rng.random() < 0.5)
        out[i] = crop_flip(image, dy, dx, flip, pad)
    return out

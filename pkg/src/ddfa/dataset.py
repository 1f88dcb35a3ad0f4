"""MNIST-style dataset loading from IDX files, plus deterministic splits."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

IMAGE_SIDE = 28
PIXELS = IMAGE_SIDE * IMAGE_SIDE


class DatasetError(Exception):
    """Base class for dataset loading failures."""


class BadMagicError(DatasetError):
    pass


class CountMismatchError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


@dataclass
class Example:
    """One image: 784 pixels in [0, 1], row-major 28x28, and its digit label."""

    pixels: np.ndarray
    label: int


class Dataset:
    """An ordered, immutable collection of examples.

    Order is load order (file order, or sorted original indices after
    subsetting); signatures are index-aligned to it, so it must never be
    shuffled in place.
    """

    def __init__(self, pixels: np.ndarray, labels: np.ndarray, name: str):
        pixels = np.asarray(pixels, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if pixels.ndim != 2 or pixels.shape[1] != PIXELS:
            raise ValueError(f"pixels must be (n, {PIXELS}), got {pixels.shape}")
        if len(labels) != len(pixels):
            raise CountMismatchError(
                f"{len(pixels)} images but {len(labels)} labels"
            )
        self.pixels = pixels
        self.labels = labels
        self.name = name
        self.pixels.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, t: int) -> Example:
        return Example(self.pixels[t], int(self.labels[t]))


def _read_header(f, path, n_fields):
    # IDX header (big endian): i32 magic, i32 count, then for images
    # i32 rows, i32 cols.  Pixel/label payload is raw uint8.
    raw = f.read(4 * n_fields)
    if len(raw) != 4 * n_fields:
        raise TruncatedFileError(f"{path}: header truncated at byte {len(raw)}")
    return struct.unpack(f">{n_fields}i", raw)


def _read_payload(f, path, count):
    expected_at = f.tell()
    data = f.read(count)
    if len(data) != count:
        raise TruncatedFileError(
            f"{path}: expected {count} payload bytes at offset {expected_at}, "
            f"got {len(data)}"
        )
    return np.frombuffer(data, dtype=np.uint8)


def load_idx(images_path, labels_path, name: str = "train") -> Dataset:
    """Load an image/label IDX file pair into a Dataset.

    Pixels are normalized to [0, 1] by dividing the raw bytes by 255.
    Raises BadMagicError, CountMismatchError, or TruncatedFileError with a
    message naming the offending file.
    """
    with open(images_path, "rb") as f:
        magic, n_images, rows, cols = _read_header(f, images_path, 4)
        if magic != IMAGE_MAGIC:
            raise BadMagicError(
                f"{images_path}: bad image magic {magic} (expected {IMAGE_MAGIC})"
            )
        if rows != IMAGE_SIDE or cols != IMAGE_SIDE:
            raise DatasetError(
                f"{images_path}: expected {IMAGE_SIDE}x{IMAGE_SIDE} images, "
                f"got {rows}x{cols}"
            )
        raw = _read_payload(f, images_path, n_images * rows * cols)

    with open(labels_path, "rb") as f:
        magic, n_labels = _read_header(f, labels_path, 2)
        if magic != LABEL_MAGIC:
            raise BadMagicError(
                f"{labels_path}: bad label magic {magic} (expected {LABEL_MAGIC})"
            )
        labels = _read_payload(f, labels_path, n_labels)

    if n_images != n_labels:
        raise CountMismatchError(
            f"{images_path} has {n_images} images but {labels_path} has "
            f"{n_labels} labels"
        )
    pixels = raw.reshape(n_images, PIXELS).astype(np.float64) / 255.0
    return Dataset(pixels, labels, name)


def split(d: Dataset, head_n: int) -> tuple[Dataset, Dataset]:
    """Split into ([0, head_n), [head_n, len)) without any shuffling."""
    if not 0 <= head_n <= len(d):
        raise ValueError(f"head_n={head_n} out of range for dataset of {len(d)}")
    head = Dataset(d.pixels[:head_n], d.labels[:head_n], f"{d.name}[:{head_n}]")
    tail = Dataset(d.pixels[head_n:], d.labels[head_n:], f"{d.name}[{head_n}:]")
    return head, tail


def subset(d: Dataset, n: int, seed: int) -> Dataset:
    """Seeded random subset of n examples, kept in original file order."""
    if not 0 < n <= len(d):
        raise ValueError(f"subset size {n} out of range for dataset of {len(d)}")
    if n == len(d):
        return d
    rng = np.random.default_rng(np.random.SeedSequence((seed, len(d), n)))
    idx = np.sort(rng.choice(len(d), size=n, replace=False))
    return Dataset(d.pixels[idx], d.labels[idx], f"{d.name}~{n}@{seed}")

"""Dataset containers and loaders for MNIST IDX and CIFAR-10 binary files.

MNIST IDX
    Big-endian. Images: magic ``0x00000803``, count, rows, cols, then one
    unsigned byte per pixel.  Labels: magic ``0x00000801``, count, then one
    byte per label.
CIFAR-10 binary
    3073-byte records: label byte, then three 32x32 row-major planes
    (R, G, B).

Pixels are scaled to [0, 1] on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)

# name -> (format, sub-directory, train files, test files)
DATASETS = {
    "mnist": ("idx", "mnist",
              ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
              ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")),
    "cifar10": ("cifar", "cifar10", "data_batch_*.bin", "test_batch.bin"),
    "cifar10-synthetic": ("cifar", "cifar10-synthetic", "data_batch_*.bin", "test_batch.bin"),
}

# desk-scale (train, test) subset sizes
DESK_SUBSETS = {"mnist": (10_000, 2_000), "cifar10": (8_000, 2_000), "cifar10-synthetic": (8_000, 2_000)}


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int = 10

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise FormatError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def take(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[indices], self.labels[indices], self.split, self.num_classes)


def _read_idx(path, magic: int) -> tuple[tuple[int, ...], bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: magic mismatch, expected 0x{magic:08x}, found 0x{found:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    payload = raw[header:]
    expected = int(np.prod(dims, dtype=np.int64))
    if len(payload) != expected:
        raise FormatError(f"{path}: truncated payload, expected {expected} bytes, found {len(payload)}")
    return dims, payload


def load_mnist(images_path, labels_path, split: str = "train") -> Dataset:
    (n, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC)
    (m,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if n != m:
        raise FormatError(f"{images_path} holds {n} images but {labels_path} holds {m} labels")
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(n, 1, rows, cols) / np.float32(255)
    return Dataset(images, np.frombuffer(labels, dtype=np.uint8), split)


def write_mnist(images_path, labels_path, images: np.ndarray, labels) -> None:
    """``images`` is uint8 (N, rows, cols) or (N, 1, rows, cols)."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape[0], images.shape[-2], images.shape[-1]
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    labels = np.asarray(labels, dtype=np.uint8)
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def load_cifar10(paths: Sequence, split: str = "train") -> Dataset:
    images, labels = [], []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) % CIFAR_RECORD:
            raise FormatError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if records.size and records[:, 0].max() > 9:
            raise FormatError(f"{path}: label byte {records[:, 0].max()} > 9")
        labels.append(records[:, 0])
        images.append(records[:, 1:].reshape(-1, *CIFAR_SHAPE))
    if not images:
        return Dataset(np.zeros((0, *CIFAR_SHAPE)), np.zeros(0), split)
    return Dataset(np.concatenate(images) / np.float32(255), np.concatenate(labels), split)


def write_cifar10(path, images: np.ndarray, labels) -> None:
    """``images`` is uint8 (N, 3, 32, 32)."""
    images = np.asarray(images, dtype=np.uint8).reshape(-1, 3072)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(np.concatenate([labels[:, None], images], axis=1).tobytes())


def stratified_indices(labels, n: int, seed: int, num_classes: int = 10) -> np.ndarray:
    """Sorted indices of a seeded class-balanced sample of size ``n``.

    Every class gets ``n // C`` or ``n // C + 1`` examples, provided each
    class has that many available; any shortfall moves to classes with spare.
    """
    labels = np.asarray(labels)
    if n > len(labels):
        raise ConfigError(f"subset of {n} requested from a dataset of {len(labels)}")
    if n < num_classes:
        raise ConfigError(f"stratified subset needs n >= {num_classes} classes, got {n}")
    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(labels == c) for c in range(num_classes)]
    quota = np.full(num_classes, n // num_classes)
    quota[rng.permutation(num_classes)[: n % num_classes]] += 1
    available = np.array([len(ix) for ix in by_class])
    short = np.maximum(quota - available, 0).sum()
    quota = np.minimum(quota, available)
    while short:
        spare = np.flatnonzero(quota < available)
        for c in spare[np.argsort(quota[spare], kind="stable")][:short]:
            quota[c] += 1
            short -= 1
    chosen = [rng.permutation(ix)[:q] for ix, q in zip(by_class, quota)]
    return np.sort(np.concatenate(chosen))


def subset(dataset: Dataset, n: int, seed: int, stratified: bool = True) -> Dataset:
    """Seeded sample of ``n`` examples with the original order preserved."""
    if not stratified:
        if n > len(dataset):
            raise ConfigError(f"subset of {n} requested from a dataset of {len(dataset)}")
        rng = np.random.default_rng(seed)
        return dataset.take(np.sort(rng.permutation(len(dataset))[:n]))
    return dataset.take(stratified_indices(dataset.labels, n, seed, dataset.num_classes))


def dataset_dir(name: str, data_dir) -> Path:
    if name not in DATASETS:
        raise ConfigError(f"unknown dataset {name!r}; choose from {sorted(DATASETS)}")
    return Path(data_dir) / DATASETS[name][1]


def load_dataset(name: str, data_dir, split: str) -> Dataset:
    fmt, _, train_files, test_files = DATASETS.get(name, (None,) * 4)
    root = dataset_dir(name, data_dir)
    files = train_files if split == "train" else test_files
    if fmt == "idx":
        paths = [root / f for f in files]
        for p in paths:
            if not p.exists():
                raise FileNotFoundError(f"missing dataset file {p}")
        return load_mnist(*paths, split=split)
    paths = sorted(root.glob(files))
    if not paths:
        raise FileNotFoundError(f"no files matching {root / files}")
    return load_cifar10(paths, split=split)

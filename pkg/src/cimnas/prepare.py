"""Build offline dataset directories in the formats :mod:`cimnas.data` reads.

``prepare_mnist`` converts the 5,000 MNIST digits bundled with ``mlxtend``
(500 per class) into IDX files.  ``prepare_synthetic_cifar`` renders a
procedural 10-class 32x32 RGB image set and stores it as CIFAR-10 binary
records; each class is a colour-tinted blob carrying an oriented grating under a
random envelope with heavy per-image jitter, distractor texture and pixel noise.
"""

from __future__ import annotations

import colorsys
import gzip
import importlib.util
from pathlib import Path

import numpy as np

from .data import DATASETS, stratified_indices, write_cifar10, write_mnist

# per-class (orientation in units of pi/5, cycles across the image, hue in degrees)
_CLASS_PATTERNS = [
    (0, 2.5, 0), (1, 2.5, 40), (2, 2.5, 80), (3, 2.5, 140), (4, 2.5, 200),
    (0, 4.5, 250), (1, 4.5, 290), (2, 4.5, 330), (3, 4.5, 20), (4, 4.5, 110),
]


def _hue_to_rgb(hue_deg: np.ndarray) -> np.ndarray:
    return np.array([colorsys.hsv_to_rgb((h % 360) / 360.0, 1.0, 1.0) for h in np.ravel(hue_deg)])


def synthetic_images(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` uint8 images (N, 3, 32, 32) with balanced labels, fully seeded."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 10)
    pattern = np.array(_CLASS_PATTERNS, dtype=np.float64)[labels]
    ys, xs = np.mgrid[-1:1:32j, -1:1:32j]

    angle = pattern[:, 0] * np.pi / 5 + rng.normal(0, 0.18, n)
    freq = pattern[:, 1] * rng.uniform(0.8, 1.2, n)
    phase = rng.uniform(0, 2 * np.pi, n)
    proj = xs[None] * np.cos(angle)[:, None, None] + ys[None] * np.sin(angle)[:, None, None]
    grating = np.sin(np.pi * freq[:, None, None] * proj + phase[:, None, None])

    cy, cx = rng.uniform(-0.5, 0.5, (2, n))
    width = rng.uniform(0.35, 0.8, n)
    env = np.exp(-((ys[None] - cy[:, None, None]) ** 2 + (xs[None] - cx[:, None, None]) ** 2)
                 / (2 * width[:, None, None] ** 2))

    # distractor: a random grating of arbitrary orientation and hue
    d_angle = rng.uniform(0, np.pi, n)
    d_proj = xs[None] * np.cos(d_angle)[:, None, None] + ys[None] * np.sin(d_angle)[:, None, None]
    distractor = np.sin(np.pi * rng.uniform(1.5, 5.5, n)[:, None, None] * d_proj + rng.uniform(0, 6.3, n)[:, None, None])

    color = _hue_to_rgb(pattern[:, 2] + rng.normal(0, 12, n))
    d_color = _hue_to_rgb(rng.uniform(0, 360, n))
    background = rng.uniform(0.2, 0.8, (n, 3))
    contrast = rng.uniform(0.15, 0.35, n)

    tint = rng.uniform(0.2, 0.4, n)
    img = background[:, :, None, None] + (
        (tint[:, None, None, None] * env[:, None] + contrast[:, None, None, None] * (env * grating)[:, None])
        * (color[:, :, None, None] - 0.5) * 2
        + 0.18 * distractor[:, None] * (d_color[:, :, None, None] - 0.5)
    )
    img += rng.normal(0, 0.08, img.shape)
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8), labels


def prepare_synthetic_cifar(data_dir, n_train: int = 10_000, n_test: int = 2_000, seed: int = 0) -> Path:
    root = Path(data_dir) / DATASETS["cifar10-synthetic"][1]
    root.mkdir(parents=True, exist_ok=True)
    images, labels = synthetic_images(n_train, seed)
    write_cifar10(root / "data_batch_1.bin", images, labels)
    images, labels = synthetic_images(n_test, seed + 1_000_003)
    write_cifar10(root / "test_batch.bin", images, labels)
    return root


def mlxtend_mnist_path() -> Path:
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or spec.origin is None:
        raise FileNotFoundError("mlxtend is not installed; `pip install mlxtend` provides the MNIST sample")
    path = Path(spec.origin).parent / "data" / "data" / "mnist_5k.csv.gz"
    if not path.exists():
        raise FileNotFoundError(f"mlxtend MNIST sample not found at {path}")
    return path


def prepare_mnist(data_dir, n_test: int = 1_000, seed: int = 0) -> Path:
    """Split the bundled digits into stratified train/test IDX files."""
    with gzip.open(mlxtend_mnist_path(), "rt") as fh:
        rows = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    pixels, labels = rows[:, :-1].astype(np.uint8), rows[:, -1]
    test_ids = stratified_indices(labels, n_test, seed)
    train_ids = np.setdiff1d(np.arange(len(labels)), test_ids)
    root = Path(data_dir) / DATASETS["mnist"][1]
    root.mkdir(parents=True, exist_ok=True)
    train_files, test_files = DATASETS["mnist"][2], DATASETS["mnist"][3]
    for ids, (img_name, lab_name) in ((train_ids, train_files), (test_ids, test_files)):
        write_mnist(root / img_name, root / lab_name, pixels[ids].reshape(-1, 28, 28), labels[ids])
    return root

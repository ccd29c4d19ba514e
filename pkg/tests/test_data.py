import struct

import numpy as np
import pytest

from cimnas.checkpoint import load_checkpoint, save_checkpoint
from cimnas.data import (
    Dataset,
    load_cifar10,
    load_mnist,
    stratified_indices,
    subset,
    write_cifar10,
    write_mnist,
)
from cimnas.errors import ConfigError, FormatError


def _idx(tmp_path, images: bytes, labels: bytes):
    ip, lp = tmp_path / "img", tmp_path / "lab"
    ip.write_bytes(images)
    lp.write_bytes(labels)
    return ip, lp


def test_mnist_hand_built_file(tmp_path):
    img = bytes([0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 51, 102, 255])
    lab = bytes([0, 0, 8, 1, 0, 0, 0, 1, 7])
    ds = load_mnist(*_idx(tmp_path, img, lab))
    assert ds.images.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(ds.images[0, 0], np.array([[0, 51], [102, 255]], np.float32) / np.float32(255))
    assert ds.labels.tolist() == [7]


def test_mnist_empty(tmp_path):
    ds = load_mnist(*_idx(tmp_path, struct.pack(">IIII", 0x803, 0, 28, 28), struct.pack(">II", 0x801, 0)))
    assert len(ds) == 0 and ds.images.shape == (0, 1, 28, 28)


def test_mnist_errors(tmp_path):
    good_lab = struct.pack(">II", 0x801, 1) + b"\x03"
    with pytest.raises(FormatError, match="img.*magic"):
        load_mnist(*_idx(tmp_path, struct.pack(">IIII", 0x804, 1, 2, 2) + bytes(4), good_lab))
    with pytest.raises(FormatError, match="truncated"):
        load_mnist(*_idx(tmp_path, struct.pack(">IIII", 0x803, 1, 2, 2) + bytes(3), good_lab))
    with pytest.raises(FormatError, match="1 images but .* 2 labels"):
        load_mnist(*_idx(tmp_path, struct.pack(">IIII", 0x803, 1, 2, 2) + bytes(4),
                         struct.pack(">II", 0x801, 2) + b"\x01\x02"))


def test_cifar_hand_built_record(tmp_path):
    planes = np.stack([np.full((32, 32), v, np.uint8) for v in (10, 20, 30)])
    planes[0, 0, 1] = 200  # row 0, column 1 of the red plane
    path = tmp_path / "b.bin"
    path.write_bytes(bytes([4]) + planes.tobytes())
    ds = load_cifar10([path])
    assert ds.images.shape == (1, 3, 32, 32) and ds.labels.tolist() == [4]
    assert ds.images[0, 0, 0, 1] == np.float32(200) / np.float32(255)
    assert ds.images[0, 1, 5, 5] == np.float32(20) / np.float32(255)
    assert ds.images[0, 2, 31, 31] == np.float32(30) / np.float32(255)


def test_cifar_concat_and_errors(tmp_path):
    rng = np.random.default_rng(0)
    for name, n in (("a.bin", 2), ("b.bin", 3)):
        write_cifar10(tmp_path / name, rng.integers(0, 256, (n, 3, 32, 32)), rng.integers(0, 10, n))
    assert len(load_cifar10([tmp_path / "a.bin", tmp_path / "b.bin"])) == 5
    (tmp_path / "short.bin").write_bytes(bytes(3072))
    with pytest.raises(FormatError, match="multiple of 3073"):
        load_cifar10([tmp_path / "short.bin"])
    (tmp_path / "label.bin").write_bytes(bytes([10]) + bytes(3072))
    with pytest.raises(FormatError, match="label byte 10"):
        load_cifar10([tmp_path / "label.bin"])


def test_loader_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    raw = rng.integers(0, 256, (6, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, 6)
    write_mnist(tmp_path / "i", tmp_path / "l", raw, labels)
    ds = load_mnist(tmp_path / "i", tmp_path / "l")
    assert ds.images.tobytes() == (raw[:, None] / np.float32(255)).astype(np.float32).tobytes()
    assert ds.labels.tolist() == labels.tolist()
    raw = rng.integers(0, 256, (4, 3, 32, 32), dtype=np.uint8)
    write_cifar10(tmp_path / "c.bin", raw, labels[:4])
    ds = load_cifar10([tmp_path / "c.bin"])
    assert ds.images.tobytes() == (raw / np.float32(255)).astype(np.float32).tobytes()
    assert np.all((ds.images >= 0) & (ds.images <= 1))


def _balanced(n_per_class=20, classes=10):
    labels = np.repeat(np.arange(classes), n_per_class)
    return Dataset(np.arange(len(labels), dtype=np.float32)[:, None], labels, "train")


def test_subset_identity_and_balance():
    ds = _balanced()
    same = subset(ds, len(ds), seed=3)
    assert sorted(same.images[:, 0].tolist()) == sorted(ds.images[:, 0].tolist())
    assert np.bincount(subset(ds, 100, seed=0).labels).tolist() == [10] * 10
    with pytest.raises(ConfigError):
        subset(ds, 9, seed=0)
    with pytest.raises(ConfigError):
        subset(ds, 201, seed=0)


@pytest.mark.parametrize("n,seed", [(10, 0), (37, 1), (95, 2), (150, 3)])
def test_subset_stratification_oracle(n, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, 400)
    counts = np.bincount(labels[stratified_indices(labels, n, seed)], minlength=10)
    assert counts.sum() == n
    available = np.bincount(labels, minlength=10)
    # quota oracle: n // 10 each, the remainder spread one apiece
    if np.all(available >= n // 10 + 1):
        assert counts.max() - counts.min() <= 1
        assert sorted(counts.tolist()) == sorted([n // 10 + (i < n % 10) for i in range(10)])
    assert np.all(counts <= available)


def test_subset_shortfall_redistributed():
    labels = np.r_[np.zeros(2, int), np.repeat(np.arange(1, 10), 30)]
    counts = np.bincount(labels[stratified_indices(labels, 100, 0)], minlength=10)
    assert counts[0] == 2 and counts.sum() == 100 and counts[1:].max() - counts[1:].min() <= 1


def test_subset_seeded():
    ds = _balanced()
    a, b = subset(ds, 50, seed=7), subset(ds, 50, seed=7)
    assert a.images.tobytes() == b.images.tobytes()
    assert subset(ds, 50, seed=8).images.tobytes() != a.images.tobytes()


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"conv1.weight": rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
               "conv1.bias": np.zeros(4, np.float32), "fc.weight": rng.normal(size=(2, 5)).astype(np.float32)}
    save_checkpoint(tmp_path / "w.cimw", tensors)
    back = load_checkpoint(tmp_path / "w.cimw")
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].dtype == np.float32 and back[k].tobytes() == tensors[k].tobytes()
    raw = (tmp_path / "w.cimw").read_bytes()
    (tmp_path / "t.cimw").write_bytes(raw[:-1])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "t.cimw")
    (tmp_path / "m.cimw").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "m.cimw")

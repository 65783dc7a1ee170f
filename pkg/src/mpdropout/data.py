"""MNIST (IDX) and CIFAR-10/100 (binary batch) readers, preprocessing and mini-batches."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from mpdropout.errors import FormatError, ParameterError
from mpdropout.tensor import DTYPE

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR10_RECORD = 1 + 3 * 32 * 32
CIFAR100_RECORD = 2 + 3 * 32 * 32

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, C, H, W) float64
    labels: np.ndarray  # (N,) int64
    n_classes: int
    preprocessed: str | None = None
    channel_mean: np.ndarray | None = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(
                f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, indices):
        return replace(self, images=self.images[indices], labels=self.labels[indices])


def _read_bytes(path):
    path = Path(path)
    if not path.exists() and path.with_name(path.name + ".gz").exists():
        path = path.with_name(path.name + ".gz")
    data = path.read_bytes()
    if path.suffix == ".gz":
        data = gzip.decompress(data)
    return data


def _idx_header(data, magic, n_dims, path):
    need = 4 * (1 + n_dims)
    if len(data) < need:
        raise FormatError(f"{path}: truncated IDX header", offset=len(data))
    found = struct.unpack_from(">i", data, 0)[0]
    if found != magic:
        raise FormatError(f"{path}: bad IDX magic {found}, expected {magic}", offset=0)
    return struct.unpack_from(">" + "i" * n_dims, data, 4), need


def read_idx_images(path):
    data = _read_bytes(path)
    (n, rows, cols), off = _idx_header(data, IDX_IMAGES_MAGIC, 3, path)
    expected = off + n * rows * cols
    if len(data) < expected:
        raise FormatError(f"{path}: truncated image data, expected {expected} bytes",
                          offset=len(data))
    return np.frombuffer(data, np.uint8, n * rows * cols, off).reshape(n, rows, cols)


def read_idx_labels(path):
    data = _read_bytes(path)
    (n,), off = _idx_header(data, IDX_LABELS_MAGIC, 1, path)
    if len(data) < off + n:
        raise FormatError(f"{path}: truncated label data, expected {off + n} bytes",
                          offset=len(data))
    return np.frombuffer(data, np.uint8, n, off)


def load_mnist(images_path, labels_path):
    """Raw MNIST pixels (0-255 as float64) in a (N, 1, 28, 28) tensor."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(
            f"count mismatch: {len(images)} images vs {len(labels)} labels", offset=4)
    if labels.size and labels.max() > 9:
        raise FormatError(f"{labels_path}: label {labels.max()} outside 0-9")
    return Dataset(images[:, None].astype(DTYPE), labels.astype(np.int64), 10)


def _load_cifar_records(paths, record, label_byte, n_classes):
    chunks = []
    for path in paths:
        data = _read_bytes(path)
        if len(data) % record:
            raise FormatError(
                f"{path}: size {len(data)} is not a multiple of the {record}-byte record",
                offset=len(data) - len(data) % record)
        chunks.append(np.frombuffer(data, np.uint8).reshape(-1, record))
    rows = np.concatenate(chunks) if chunks else np.empty((0, record), np.uint8)
    labels = rows[:, label_byte].astype(np.int64)
    if labels.size and labels.max() >= n_classes:
        raise FormatError(f"label {labels.max()} outside [0, {n_classes})")
    images = rows[:, record - 3072:].reshape(-1, 3, 32, 32).astype(DTYPE)
    return Dataset(images, labels, n_classes)


def load_cifar10(batch_paths):
    return _load_cifar_records(list(batch_paths), CIFAR10_RECORD, 0, 10)


def load_cifar100(path):
    """CIFAR-100 binary file; the fine label (second byte) is used."""
    paths = [path] if isinstance(path, (str, Path)) else list(path)
    return _load_cifar_records(paths, CIFAR100_RECORD, 1, 100)


def preprocess(dataset, mode, channel_mean=None):
    """Scale to [0, 1]; in ``cifar`` mode also subtract per-channel means.

    Means default to those of ``dataset`` itself; pass the training-set
    means when preprocessing a test split.
    """
    if mode not in ("mnist", "cifar"):
        raise ParameterError(f"unknown preprocessing mode {mode!r}")
    if dataset.preprocessed is not None:
        raise ParameterError(f"dataset already preprocessed ({dataset.preprocessed})")
    images = dataset.images / 255.0
    mean = None
    if mode == "cifar":
        if channel_mean is None:
            mean = images.mean(axis=(0, 2, 3))
        else:
            mean = np.asarray(channel_mean, dtype=DTYPE)
        images = images - mean.reshape(1, -1, 1, 1)
    return replace(dataset, images=images, preprocessed=mode, channel_mean=mean)


def batch_iter(dataset, batch_size, rng=None):
    """Yield (images, labels) mini-batches; shuffled with ``rng`` when given.

    The final short batch is emitted.
    """
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    n = len(dataset)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


def _find(data_dir, names):
    data_dir = Path(data_dir)
    for sub in ("", "cifar-10-batches-bin", "cifar-100-binary"):
        candidates = [data_dir / sub / n for n in names]
        if all(c.exists() or c.with_name(c.name + ".gz").exists() for c in candidates):
            return candidates
    raise FileNotFoundError(f"could not find {', '.join(names)} under {data_dir}")


def load_dataset(name, data_dir):
    """Load and preprocess the (train, test) splits of a named dataset."""
    if name == "mnist":
        train = load_mnist(*_find(data_dir, MNIST_FILES["train"]))
        test = load_mnist(*_find(data_dir, MNIST_FILES["test"]))
        return preprocess(train, "mnist"), preprocess(test, "mnist")
    if name == "cifar10":
        train = load_cifar10(_find(data_dir, [f"data_batch_{i}.bin" for i in range(1, 6)]))
        test = load_cifar10(_find(data_dir, ["test_batch.bin"]))
    elif name == "cifar100":
        train = load_cifar100(_find(data_dir, ["train.bin"]))
        test = load_cifar100(_find(data_dir, ["test.bin"]))
    else:
        raise ParameterError(f"unknown dataset {name!r}")
    train = preprocess(train, "cifar")
    return train, preprocess(test, "cifar", channel_mean=train.channel_mean)

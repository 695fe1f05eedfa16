"""Datasets: two interleaved semicircles, MNIST IDX files and numeric CSV tables."""

import csv
import gzip
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.model_selection import train_test_split

from .numerics import DTYPE

IDX_IMAGE_MAGIC = 0x00000803  # 2051
IDX_LABEL_MAGIC = 0x00000801  # 2049

JET_FEATURES = 16
JET_CLASSES = 5


class DataFormatError(ValueError):
    """Raised when an input file does not match its declared format."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    mean: np.ndarray = None
    std: np.ndarray = None

    def __len__(self):
        return len(self.y)

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx], self.n_classes, self.mean, self.std)


def standardization(X):
    """Per-feature mean and standard deviation; constant features get std 1."""
    X = np.asarray(X, dtype=DTYPE)
    std = X.std(axis=0)
    return X.mean(axis=0), np.where(std > 0, std, 1.0)


def semicircle_points(theta, cls):
    theta = np.asarray(theta, dtype=DTYPE)
    if cls == 0:
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    return np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=-1)


def gen_two_semicircles(n_per_class=1000, noise_std=0.1, seed=0):
    """Two interleaved half circles with isotropic Gaussian noise.

    Class 0 lies on the upper unit semicircle, class 1 on a flipped copy shifted
    by ``(1, 0.5)``. Angles are uniform on ``[0, pi]``.
    """
    if n_per_class < 1 or noise_std < 0:
        raise ValueError("n_per_class must be >= 1 and noise_std >= 0")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, np.pi, size=(2, n_per_class))
    X = np.concatenate([semicircle_points(theta[0], 0), semicircle_points(theta[1], 1)])
    if noise_std > 0:
        X = X + rng.normal(0.0, noise_std, size=X.shape)
    y = np.repeat(np.arange(2), n_per_class)
    return Dataset(X, y, 2)


def split(dataset, test_fraction=0.2, seed=0):
    """Seeded stratified train/test split."""
    idx_train, idx_test = train_test_split(
        np.arange(len(dataset)), test_size=test_fraction, random_state=seed,
        stratify=dataset.y,
    )
    return dataset.subset(np.sort(idx_train)), dataset.subset(np.sort(idx_test))


def load_sklearn_digits():
    """The 8x8 handwritten digits bundled with scikit-learn, scaled to [0, 1]."""
    from sklearn.datasets import load_digits

    d = load_digits()
    return Dataset(d.data.astype(DTYPE) / 16.0, d.target.astype(np.int64), 10)


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, expected_magic, ndim):
    with _open(path) as f:
        data = f.read()
    if len(data) < 4 + 4 * ndim:
        raise DataFormatError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad magic {magic}, expected {expected_magic}")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    offset = 4 + 4 * ndim
    count = int(np.prod(dims))
    if len(data) - offset < count:
        raise DataFormatError(
            f"{path}: truncated payload, need {count} bytes, have {len(data) - offset}"
        )
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=offset).reshape(dims)


def read_idx_magic(path):
    with _open(path) as f:
        head = f.read(4)
    if len(head) < 4:
        raise DataFormatError(f"{path}: truncated IDX header")
    return struct.unpack(">I", head)[0]


def load_mnist_idx(image_path, label_path):
    """Load an IDX image/label pair as ``n x (rows*cols)`` features in ``[0, 1]``."""
    images = _read_idx(image_path, IDX_IMAGE_MAGIC, 3)
    labels = _read_idx(label_path, IDX_LABEL_MAGIC, 1)
    if len(images) != len(labels):
        raise DataFormatError(f"{len(images)} images but {len(labels)} labels")
    X = images.reshape(len(images), -1).astype(DTYPE) / 255.0
    return Dataset(X, labels.astype(np.int64), 10)


def write_mnist_idx(image_path, label_path, images, labels):
    """Write ``uint8`` images ``(n, rows, cols)`` and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(image_path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(label_path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def load_tabular_csv(path, feature_count, class_count, header=False, stats=None):
    """Rows of ``feature_count`` numeric fields followed by an integer label.

    Standardization statistics are computed from this file unless ``stats``
    (a ``(mean, std)`` pair from the training split) is given.
    """
    rows, labels = [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != feature_count + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {feature_count + 1} fields, got {len(row)}"
                )
            try:
                rows.append([float(c) for c in row[:-1]])
                label = int(row[-1])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            if not 0 <= label < class_count:
                raise DataFormatError(f"{path}:{lineno}: label {label} outside [0, {class_count})")
            labels.append(label)
    X = np.asarray(rows, dtype=DTYPE).reshape(-1, feature_count)
    mean, std = stats if stats is not None else standardization(X)
    return Dataset(X, np.asarray(labels, dtype=np.int64), class_count, mean, std)


def write_tabular_csv(path, dataset):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for x, label in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in x] + [int(label)])

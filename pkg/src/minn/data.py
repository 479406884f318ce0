"""Dataset ingestion and synthetic data.

Real datasets arrive as IDX files (the MNIST family container: a
big-endian 32-bit magic, big-endian 32-bit dimension sizes, then raw
unsigned bytes).  Pixels are scaled to [0,1] by /255 and flattened
row-major; no other preprocessing.  A writer for the same format makes
the loader testable without network access, and synthetic Gaussian
blobs stand in for image data in fast tests.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import Array, Rng

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049


@dataclass(frozen=True)
class Dataset:
    """Immutable labeled dataset: features in [0,1], integer labels."""

    features: Array  # (n, dim) float64
    labels: Array  # (n,) int
    n_classes: int
    feature_shape: tuple[int, ...]  # original per-sample shape, e.g. (28, 28)

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on sample count")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label outside [0, n_classes)")
        if int(np.prod(self.feature_shape)) != self.features.shape[1]:
            raise ValueError("feature_shape does not match the flattened width")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def one_hot_labels(self) -> Array:
        return one_hot_matrix(self.labels, self.n_classes)

    def subset(self, indices: Array) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.n_classes, self.feature_shape)


def one_hot(label: int, n_classes: int) -> Array:
    if not 0 <= label < n_classes:
        raise ValueError(f"label {label} outside [0, {n_classes})")
    v = np.zeros(n_classes)
    v[label] = 1.0
    return v


def one_hot_matrix(labels: Array, n_classes: int) -> Array:
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label outside [0, {n_classes})")
    m = np.zeros((labels.shape[0], n_classes))
    m[np.arange(labels.shape[0]), labels] = 1.0
    return m


def _open_maybe_gzip(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, n_bytes: int, offset: int, what: str) -> bytes:
    raw = fh.read(n_bytes)
    if len(raw) != n_bytes:
        raise ValueError(f"truncated IDX file: wanted {n_bytes} bytes of {what} at byte offset {offset}")
    return raw


def _read_idx(path, expected_magic: int, expected_dims: int) -> Array:
    with _open_maybe_gzip(path) as fh:
        magic = struct.unpack(">i", _read_exact(fh, 4, 0, "magic"))[0]
        if magic != expected_magic:
            raise ValueError(f"bad magic {magic} at byte offset 0 in {path} (expected {expected_magic})")
        dims = []
        for i in range(expected_dims):
            offset = 4 + 4 * i
            dims.append(struct.unpack(">i", _read_exact(fh, 4, offset, f"dimension {i}"))[0])
        count = int(np.prod(dims))
        payload_offset = 4 + 4 * expected_dims
        raw = _read_exact(fh, count, payload_offset, "payload")
        extra = fh.read(1)
        if extra:
            raise ValueError(f"trailing data at byte offset {payload_offset + count} in {path}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label pair into a dataset with features in [0,1]."""
    images = _read_idx(images_path, IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    n, rows, cols = images.shape
    features = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    n_classes = max(int(labels.max()) + 1, 2) if labels.size else 2
    return Dataset(features, labels.astype(int), n_classes, (rows, cols))


def save_idx_images(path, images: Array) -> None:
    """Write (n, rows, cols) uint8 images in the IDX container."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be (n, rows, cols)")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def save_idx_labels(path, labels: Array) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if labels.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def export_dataset_idx(ds: Dataset, images_path, labels_path) -> None:
    """Re-serialize a loaded dataset; inverse of load_idx for byte data."""
    if len(ds.feature_shape) != 2:
        raise ValueError("only image-shaped datasets export to IDX")
    pixels = np.rint(ds.features * 255.0).astype(np.uint8)
    save_idx_images(images_path, pixels.reshape(len(ds), *ds.feature_shape))
    save_idx_labels(labels_path, ds.labels.astype(np.uint8))


def split_shuffle(ds: Dataset, train_fraction: float, rng: Rng) -> tuple[Dataset, Dataset]:
    """Seeded permutation then prefix split into train/test."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train fraction must be in (0,1), got {train_fraction}")
    perm = rng.permutation(len(ds))
    cut = int(round(train_fraction * len(ds)))
    return ds.subset(perm[:cut]), ds.subset(perm[cut:])


def _separated_centers(n_classes: int, dim: int, separation: float, rng: Rng) -> Array:
    margin = 0.15
    centers = []
    for _ in range(20_000):
        cand = rng.uniform(margin, 1.0 - margin, dim)
        if all(np.linalg.norm(cand - c) >= separation for c in centers):
            centers.append(cand)
            if len(centers) == n_classes:
                return np.stack(centers)
    raise ValueError(f"could not place {n_classes} centers {separation} apart inside the unit box")


def synthetic_blobs(
    n_classes: int,
    dim: int,
    n_per_class: int,
    separation: float,
    rng: Rng,
    spread: float | None = None,
) -> Dataset:
    """Balanced Gaussian clusters at separated centers, clipped to [0,1]."""
    if separation <= 0:
        raise ValueError("separation must be positive")
    if spread is None:
        spread = separation / 8.0
    centers = _separated_centers(n_classes, dim, separation, rng)
    feats = []
    labels = []
    for k in range(n_classes):
        pts = centers[k] + spread * rng.normal((n_per_class, dim))
        feats.append(np.clip(pts, 0.0, 1.0))
        labels.append(np.full(n_per_class, k, dtype=int))
    return Dataset(np.concatenate(feats), np.concatenate(labels), n_classes, (dim,))


MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


def find_mnist(data_dir) -> dict[str, Path] | None:
    """Locate the four standard MNIST IDX files (optionally gzipped)."""
    root = Path(data_dir)
    found = {}
    for key, names in MNIST_FILES.items():
        hit = None
        for name in names:
            for cand in (root / name, root / (name + ".gz")):
                if cand.is_file():
                    hit = cand
                    break
            if hit:
                break
        if hit is None:
            return None
        found[key] = hit
    return found


def load_mnist(data_dir, train_limit: int | None = None, test_limit: int | None = None) -> tuple[Dataset, Dataset]:
    paths = find_mnist(data_dir)
    if paths is None:
        raise FileNotFoundError(f"no MNIST IDX files under {data_dir}")
    train = load_idx(paths["train_images"], paths["train_labels"])
    test = load_idx(paths["test_images"], paths["test_labels"])
    if train_limit is not None:
        train = train.subset(np.arange(min(train_limit, len(train))))
    if test_limit is not None:
        test = test.subset(np.arange(min(test_limit, len(test))))
    return train, test

"""Datasets: synthetic Gaussian clusters, Dirichlet label-skew splits, IDX files."""

from __future__ import annotations

import csv
import gzip
import itertools
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable labelled feature matrix."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise DataError(f"bad shapes: features {x.shape}, labels {y.shape}")
        if self.num_classes < 2:
            raise DataError("num_classes must be >= 2")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise DataError("label outside [0, num_classes)")
        if not np.all(np.isfinite(x)):
            raise DataError("non-finite feature values")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"feature_{j}" for j in range(self.dim)] + ["label"])
            for row, label in zip(self.features.tolist(), self.labels.tolist()):
                writer.writerow([repr(v) for v in row] + [label])


@dataclass(frozen=True)
class PartitionPlan:
    assignments: tuple[np.ndarray, ...]
    concentration: float

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    def sizes(self) -> np.ndarray:
        return np.array([a.size for a in self.assignments], dtype=np.int64)

    def fractions(self) -> list[float]:
        """Data-size fractions ``|D_k| / |D|``; they sum to exactly 1."""
        sizes = self.sizes()
        total = int(sizes.sum())
        fr = [int(s) / total for s in sizes]
        # push the rounding residue into the largest share until the
        # correctly rounded sum is exactly 1
        big = int(sizes.argmax())
        for _ in range(8):
            residue = math.fsum([1.0] + [-f for f in fr])
            if residue == 0.0:
                break
            moved = fr[big] + residue
            if moved == fr[big]:
                moved = math.nextafter(fr[big], math.copysign(math.inf, residue))
            fr[big] = moved
        return fr


def gen_synthetic(num_classes: int, dim: int, n: int, class_sep: float, seed: int) -> Dataset:
    """Gaussian class clusters with unit within-class variance.

    Class means are random directions rescaled so the closest pair of means
    is exactly ``class_sep`` apart. Class counts differ by at most one.
    """
    if num_classes < 2 or dim < 1 or n < num_classes:
        raise ConfigError("need num_classes >= 2, dim >= 1 and n >= num_classes")
    if class_sep < 0:
        raise ConfigError("class_sep must be non-negative")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    means = rng.standard_normal((num_classes, dim))
    closest = min(np.linalg.norm(means[i] - means[j])
                  for i, j in itertools.combinations(range(num_classes), 2))
    means *= class_sep / closest if closest > 0 else 0.0
    labels = rng.permutation(np.arange(n) % num_classes)
    features = means[labels] + rng.standard_normal((n, dim))
    return Dataset(features, labels, num_classes)


def train_test_split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in (0, 1)")
    n_test = max(1, int(round(test_fraction * len(data))))
    if n_test >= len(data):
        raise DataError("dataset too small to split")
    order = np.random.default_rng(np.random.SeedSequence([seed, 0x5E1]))\
        .permutation(len(data))
    return data.subset(np.sort(order[n_test:])), data.subset(np.sort(order[:n_test]))


def dirichlet_partition(data: Dataset, num_clients: int, concentration: float,
                        seed: int) -> PartitionPlan:
    """Split sample indices across clients with Dirichlet label skew.

    For every class, the share each client receives is drawn from a
    symmetric Dirichlet(concentration). Clients left empty are repaired by
    moving one sample from the currently largest client.
    """
    n = len(data)
    if num_clients < 1 or num_clients > n:
        raise ConfigError(f"num_clients must lie in [1, {n}], got {num_clients}")
    if not concentration > 0:
        raise ConfigError("concentration must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1C]))
    buckets: list[list[int]] = [[] for _ in range(num_clients)]
    for c in range(data.num_classes):
        idx = np.flatnonzero(data.labels == c)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        shares = rng.dirichlet(np.full(num_clients, concentration))
        cuts = (np.cumsum(shares)[:-1] * idx.size).astype(np.int64)
        for k, chunk in enumerate(np.split(idx, cuts)):
            buckets[k].extend(chunk.tolist())
    for k in range(num_clients):
        if not buckets[k]:
            donor = max(range(num_clients), key=lambda j: (len(buckets[j]), -j))
            buckets[k].append(buckets[donor].pop())
    return PartitionPlan(tuple(np.array(sorted(b), dtype=np.int64) for b in buckets),
                         float(concentration))


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def load_idx(images_path, labels_path, limit: int | None = None,
             num_classes: int | None = None) -> Dataset:
    """Read an IDX image/label file pair (optionally gzipped).

    Pixels are scaled to [0, 1] and each image is flattened row-major.
    """
    if limit is not None and limit < 1:
        raise DataError("limit must be a positive sample count")
    with _open(images_path) as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise FormatError(f"{images_path}: truncated header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"{images_path}: bad magic 0x{magic:08x}")
        pixels = fh.read()
    with _open(labels_path) as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise FormatError(f"{labels_path}: truncated header")
        magic, n_labels = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"{labels_path}: bad magic 0x{magic:08x}")
        raw_labels = fh.read()
    if n_labels != count:
        raise FormatError(f"image count {count} != label count {n_labels}")
    if len(pixels) < count * rows * cols or len(raw_labels) < count:
        raise FormatError("payload shorter than the header promises")
    keep = count if limit is None else min(limit, count)
    if keep == 0:
        raise DataError("IDX files contain no samples")
    images = np.frombuffer(pixels, dtype=np.uint8, count=keep * rows * cols)
    labels = np.frombuffer(raw_labels, dtype=np.uint8, count=keep).astype(np.int64)
    features = images.reshape(keep, rows * cols).astype(np.float64) / 255.0
    if num_classes is None:
        num_classes = max(2, int(labels.max()) + 1)
    return Dataset(features, labels, num_classes)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (n x rows x cols) and labels in IDX layout."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())

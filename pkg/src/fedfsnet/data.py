"""Datasets, IDX ingestion and the client partitioners."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConsistencyError, FormatError, TruncatedFileError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ConsistencyError("features must be 2-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ConsistencyError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConsistencyError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, self.image_shape)

    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"{what}: expected {n} bytes, got {len(buf)}")
    return buf


def read_idx_images(path) -> np.ndarray:
    with _open(path) as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, str(path)))
        if magic != IMAGES_MAGIC:
            raise FormatError(f"{path}: bad images magic 0x{magic:08x}")
        count, rows, cols = struct.unpack(">III", _read_exact(f, 12, str(path)))
        pixels = _read_exact(f, count * rows * cols, str(path))
    return np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with _open(path) as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, str(path)))
        if magic != LABELS_MAGIC:
            raise FormatError(f"{path}: bad labels magic 0x{magic:08x}")
        (count,) = struct.unpack(">I", _read_exact(f, 4, str(path)))
        raw = _read_exact(f, count, str(path))
    return np.frombuffer(raw, dtype=np.uint8)


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"images file holds {images.shape[0]} items, labels file {labels.shape[0]}"
        )
    if num_classes is None:
        num_classes = max(10, int(labels.max()) + 1) if labels.size else 10
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), num_classes, images.shape[1:])


def write_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write features (rescaled to bytes) and labels as IDX files; ``.gz`` compresses."""
    rows, cols = dataset.image_shape or (1, dataset.dim)
    pixels = np.clip(np.rint(dataset.features * 255.0), 0, 255).astype(np.uint8)
    n = len(dataset)
    img = struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + pixels.tobytes()
    lab = struct.pack(">II", LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    for path, payload in ((images_path, img), (labels_path, lab)):
        path = Path(path)
        opener = gzip.open if path.suffix == ".gz" else open
        with opener(path, "wb") as f:
            f.write(payload)


def make_synthetic(num_classes: int, samples_per_class: int, d_in: int,
                   cluster_spread: float, seed) -> Dataset:
    """Isotropic Gaussian blobs around random class centers, clipped to [0, 1].

    Rows are grouped by class (class 0 first).
    """
    if min(num_classes, samples_per_class, d_in) < 1:
        raise ConfigError("counts must be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(num_classes, d_in))
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    noise = rng.normal(0.0, 1.0, size=(labels.size, d_in)) * cluster_spread
    features = np.clip(centers[labels] + noise, 0.0, 1.0)
    return Dataset(features, labels, num_classes)


@dataclass
class PartitionPlan:
    assignments: list[np.ndarray]
    num_clients: int
    shards_per_client: int
    shards: list[list[np.ndarray]] = field(default_factory=list)

    def sizes(self) -> list[int]:
        return [a.size for a in self.assignments]

    def validate(self, total: int | None = None) -> None:
        """Check disjointness (and coverage of ``range(total)`` when given)."""
        allidx = np.concatenate(self.assignments) if self.assignments else np.array([], int)
        if np.unique(allidx).size != allidx.size:
            raise ConsistencyError("client index sets overlap")
        if total is not None and not np.array_equal(np.sort(allidx), np.arange(total)):
            raise ConsistencyError("plan does not cover the dataset")


def partition_noniid(dataset: Dataset, num_clients: int, num_shards: int, seed) -> PartitionPlan:
    """Label-sorted shards dealt at random, ``num_shards // num_clients`` per client."""
    if num_clients < 1 or num_shards < 1 or num_shards % num_clients:
        raise ConfigError(f"{num_shards} shards cannot be dealt evenly to {num_clients} clients")
    shard_size = len(dataset) // num_shards
    if shard_size < 1:
        raise ConfigError(f"{len(dataset)} samples is fewer than {num_shards} shards")
    order = np.argsort(dataset.labels, kind="stable")[: shard_size * num_shards]
    shard_idx = order.reshape(num_shards, shard_size)
    perm = np.random.default_rng(seed).permutation(num_shards)
    per = num_shards // num_clients
    shards = [[shard_idx[s] for s in perm[c * per:(c + 1) * per]] for c in range(num_clients)]
    return PartitionPlan([np.concatenate(s) for s in shards], num_clients, per, shards)


def partition_iid(dataset: Dataset, num_clients: int, seed) -> PartitionPlan:
    if not 1 <= num_clients <= len(dataset):
        raise ConfigError(f"cannot split {len(dataset)} samples over {num_clients} clients")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    parts = np.array_split(perm, num_clients)
    return PartitionPlan(parts, num_clients, 1, [[p] for p in parts])

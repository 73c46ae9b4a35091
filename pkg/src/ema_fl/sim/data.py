"""Datasets for the simulator: synthetic Gaussian blobs, IDX (MNIST-format) files,
train/test splitting and client partitioning."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from ..errors import ConfigError, TooFewSamples

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __len__(self):
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


@dataclass(frozen=True)
class DatasetSpec:
    """Where the simulation data comes from.

    ``kind="blobs"`` draws ``n_samples`` points from ``n_classes`` isotropic
    unit-variance Gaussian clusters.  For two classes the means are
    ``separation`` apart; see :func:`blob_means` for ``offset``.  ``kind="idx"`` reads
    MNIST-format files, optionally keeping only the first ``subsample``
    items.
    """

    kind: str = "blobs"
    n_classes: int = 2
    dim: int = 10
    separation: float = 5.0
    offset: float = 0.0
    n_samples: int = 12000
    images_path: str | None = None
    labels_path: str | None = None
    subsample: int | None = None
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in ("blobs", "idx"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.kind == "blobs" and (self.n_classes < 2 or self.dim < 1 or self.separation <= 0):
            raise ConfigError("blobs need n_classes >= 2, dim >= 1, separation > 0")
        if self.kind == "idx" and not (self.images_path and self.labels_path):
            raise ConfigError("idx datasets need images_path and labels_path")


def blob_means(n_classes: int, dim: int, separation: float, offset: float, rng) -> np.ndarray:
    """Class means ``separation / 2`` from a common centre.

    The centre sits ``offset`` away from the origin along the axis joining
    the first and last class, so with a non-zero offset the decision
    boundary does not pass through the origin and the intercept has to be
    learned.
    """
    directions = rng.standard_normal((n_classes, dim))
    if n_classes == 2:
        directions[1] = -directions[0]
    else:
        directions -= directions.mean(axis=0)
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = directions * (separation / 2)
    axis = means[-1] - means[0]
    return means + offset * axis / np.linalg.norm(axis)


def make_blobs(spec: DatasetSpec, seed: int) -> Dataset:
    rng = np.random.default_rng([seed, 0xB10B])
    means = blob_means(spec.n_classes, spec.dim, spec.separation, spec.offset, rng)
    labels = np.arange(spec.n_samples) % spec.n_classes
    rng.shuffle(labels)
    features = means[labels] + rng.standard_normal((spec.n_samples, spec.dim))
    return Dataset(features, labels.astype(np.int64), spec.n_classes)


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    """``(count, rows, cols)`` uint8 array from an IDX image file."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise ValueError(f"{path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(f"{path}: bad image magic 0x{magic:08x}")
    if len(raw) != 16 + count * rows * cols:
        raise ValueError(f"{path}: payload size does not match header")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated IDX header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise ValueError(f"{path}: bad label magic 0x{magic:08x}")
    if len(raw) != 8 + count:
        raise ValueError(f"{path}: payload size does not match header")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).copy()


def write_idx_images(path, images) -> None:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


def load_idx_dataset(images_path, labels_path, subsample: int | None = None) -> Dataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.size:
        raise ValueError("image and label counts differ")
    if subsample is not None:
        images, labels = images[:subsample], labels[:subsample]
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), int(labels.max()) + 1)


def load_dataset(spec: DatasetSpec, seed: int) -> Dataset:
    if spec.kind == "blobs":
        return make_blobs(spec, seed)
    return load_idx_dataset(spec.images_path, spec.labels_path, spec.subsample)


def train_test_split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng([seed, 0x5B11])
    order = rng.permutation(len(data))
    n_test = max(1, int(round(test_fraction * len(data))))
    return data.subset(np.sort(order[n_test:])), data.subset(np.sort(order[:n_test]))


class PartitionKind(str, Enum):
    IID = "iid"
    LABEL_SHARD = "label_shard"
    DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class PartitionSpec:
    kind: PartitionKind = PartitionKind.IID
    shards_per_client: int = 2
    alpha: float = 0.5

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", PartitionKind(str(getattr(self.kind, "value", self.kind)).lower()))
        except ValueError:
            raise ConfigError(f"unknown partition kind {self.kind!r}") from None
        if self.shards_per_client < 1 or self.alpha <= 0:
            raise ConfigError("shards_per_client must be >= 1 and alpha > 0")


def _rebalance_empty(parts: list[np.ndarray]) -> list[np.ndarray]:
    """Move one sample from the largest client into each empty one."""
    parts = [np.asarray(p, dtype=np.int64) for p in parts]
    for i, p in enumerate(parts):
        if p.size == 0:
            donor = max(range(len(parts)), key=lambda j: (parts[j].size, -j))
            parts[i] = parts[donor][-1:]
            parts[donor] = parts[donor][:-1]
    return parts


def partition_data(
    data: Dataset, partition: PartitionSpec, n_clients: int, seed: int
) -> list[np.ndarray]:
    """Sample indices for each client; every client receives at least one sample."""
    n = len(data)
    if n < n_clients:
        raise TooFewSamples(f"{n} samples cannot cover {n_clients} clients")
    rng = np.random.default_rng([seed, 0x9A27])

    if partition.kind is PartitionKind.IID:
        parts = np.array_split(rng.permutation(n), n_clients)

    elif partition.kind is PartitionKind.LABEL_SHARD:
        n_shards = n_clients * partition.shards_per_client
        if n < n_shards:
            raise TooFewSamples(f"{n} samples cannot form {n_shards} shards")
        shuffled = rng.permutation(n)
        by_label = shuffled[np.argsort(data.labels[shuffled], kind="stable")]
        shards = np.array_split(by_label, n_shards)
        deal = rng.permutation(n_shards).reshape(n_clients, partition.shards_per_client)
        parts = [np.concatenate([shards[s] for s in row]) for row in deal]

    else:
        buckets: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
        for c in range(data.n_classes):
            idx = rng.permutation(np.flatnonzero(data.labels == c))
            share = rng.dirichlet(np.full(n_clients, partition.alpha))
            cuts = np.round(np.cumsum(share)[:-1] * idx.size).astype(int)
            for client, chunk in enumerate(np.split(idx, cuts)):
                buckets[client].append(chunk)
        parts = [np.concatenate(b) if b else np.empty(0, dtype=np.int64) for b in buckets]

    return [np.sort(p) for p in _rebalance_empty(parts)]

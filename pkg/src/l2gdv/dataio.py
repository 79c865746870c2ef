"""Datasets, IDX file loading, and client partitioners.

The IDX reader handles the standard big-endian container for image/label
sets (magic 0x00000803 for images, 0x00000801 for labels), transparently
decompressing gzip, and reports bad magic numbers, truncation, and
image/label count mismatches as distinct errors.

Partitioners produce exact set partitions of the sample indices: IID
shuffles and deals evenly; the non-IID scheme sorts by label, slices the
sorted order into n * shards_per_client equal shards, and deals each client
its shards at random, concentrating a couple of labels per client.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import rng_for

__all__ = [
    "Dataset",
    "Partition",
    "IdxFormatError",
    "BadMagicError",
    "TruncatedFileError",
    "CountMismatchError",
    "load_idx",
    "design_matrix",
    "binarize",
    "synth_gaussian_classes",
    "partition_iid",
    "partition_noniid",
]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX input."""


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, integer labels, and the number of classes."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError(f"features must be a nonempty (m, d) matrix, got {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError("labels must be one integer per sample")
        if self.class_count < 2:
            raise ValueError("need at least two classes")
        if y.min() < 0 or y.max() >= self.class_count:
            raise ValueError("labels must lie in [0, class_count)")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Partition:
    """Disjoint, non-empty index lists assigning samples to clients."""

    assignments: tuple

    def __post_init__(self) -> None:
        lists = tuple(np.asarray(a, dtype=np.int64) for a in self.assignments)
        if not lists:
            raise ValueError("need at least one client")
        seen: set[int] = set()
        for a in lists:
            if a.size == 0:
                raise ValueError("every client must receive at least one sample")
            ids = set(a.tolist())
            if len(ids) != a.size or ids & seen:
                raise ValueError("assignments must be disjoint")
            seen |= ids
        object.__setattr__(self, "assignments", lists)

    @property
    def n(self) -> int:
        return len(self.assignments)

    def covered(self) -> np.ndarray:
        return np.sort(np.concatenate(self.assignments))


def _open_maybe_gzip(path):
    p = Path(path)
    with open(p, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(p, "rb")
    return open(p, "rb")


def _read_exact(fh, count: int, path, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedFileError(
            f"{path}: truncated while reading {what} ({len(data)} of {count} bytes)"
        )
    return data


def _read_idx_array(path, expected_magic: int, ndim: int, what: str) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, path, "magic number"))
        if magic != expected_magic:
            raise BadMagicError(
                f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x} for {what}"
            )
        dims = struct.unpack(f">{ndim}I", _read_exact(fh, 4 * ndim, path, "header"))
        count = int(np.prod(dims))
        raw = _read_exact(fh, count, path, f"{count} data bytes")
        if fh.read(1):
            raise IdxFormatError(f"{path}: trailing bytes after {count} data bytes")
    return np.frombuffer(raw, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Read an images/labels IDX pair into a Dataset.

    Pixels are scaled to [0, 1] and images flattened to rows; the label
    file must contain exactly one label per image.
    """
    images = _read_idx_array(images_path, IMAGES_MAGIC, 3, "images")
    labels = _read_idx_array(labels_path, LABELS_MAGIC, 1, "labels")
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels "
            f"({images_path} vs {labels_path})"
        )
    m = images.shape[0]
    X = images.reshape(m, -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    return Dataset(features=X, labels=y, class_count=int(y.max()) + 1)


def design_matrix(dataset: Dataset, intercept: bool = True) -> np.ndarray:
    """Features, optionally augmented with a trailing all-ones column."""
    if not intercept:
        return dataset.features
    return np.hstack([dataset.features, np.ones((dataset.m, 1))])


def binarize(dataset: Dataset, positive_class: int) -> Dataset:
    """One-vs-rest view: label 1 for the chosen class, 0 for everything else.

    Multiclass problems are handled by training one binary model per class
    on these views and predicting by the highest score.
    """
    if not (0 <= positive_class < dataset.class_count):
        raise ValueError(f"positive_class must lie in [0, {dataset.class_count})")
    labels = (dataset.labels == positive_class).astype(np.int64)
    return Dataset(features=dataset.features, labels=labels, class_count=2)


def synth_gaussian_classes(m: int, d: int, classes: int, separation: float, seed: int) -> Dataset:
    """Class-conditional unit Gaussians with pairwise mean distance `separation`.

    Class means sit on scaled coordinate axes (random directions when
    classes > d), samples are shuffled, and class sizes differ by at most
    one.  Deterministic in the seed.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    if m < classes:
        raise ValueError("need m >= classes so every class appears")
    if d < 1:
        raise ValueError("need d >= 1")
    if separation < 0:
        raise ValueError("separation must be >= 0")
    rng = rng_for(seed, "synth-gaussian")
    means = np.zeros((classes, d))
    if classes <= d:
        for c in range(classes):
            means[c, c] = separation / np.sqrt(2.0)
    else:
        dirs = rng.standard_normal((classes, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        means = (separation / np.sqrt(2.0)) * dirs
    counts = [m // classes + (1 if c < m % classes else 0) for c in range(classes)]
    feats, labels = [], []
    for c, cnt in enumerate(counts):
        feats.append(means[c] + rng.standard_normal((cnt, d)))
        labels.append(np.full(cnt, c, dtype=np.int64))
    X = np.vstack(feats)
    y = np.concatenate(labels)
    perm = rng.permutation(m)
    return Dataset(features=X[perm], labels=y[perm], class_count=classes)


def partition_iid(dataset: Dataset, n: int, seed: int) -> Partition:
    """Shuffle, then split into n nearly equal index lists."""
    if not (1 <= n <= dataset.m):
        raise ValueError(f"need 1 <= n <= m, got n={n}, m={dataset.m}")
    perm = rng_for(seed, "partition-iid").permutation(dataset.m)
    return Partition(tuple(np.sort(chunk) for chunk in np.array_split(perm, n)))


def partition_noniid(dataset: Dataset, n: int, shards_per_client: int, seed: int) -> Partition:
    """Sort by label, slice into n*shards_per_client equal shards, deal at random.

    Requires m to divide evenly into the requested shards.
    """
    if n < 1 or shards_per_client < 1:
        raise ValueError("need n >= 1 and shards_per_client >= 1")
    shards = n * shards_per_client
    if dataset.m % shards != 0:
        raise ValueError(
            f"m={dataset.m} does not divide into {shards} equal shards "
            f"(n={n} x shards_per_client={shards_per_client})"
        )
    size = dataset.m // shards
    order = np.argsort(dataset.labels, kind="stable")
    deal = rng_for(seed, "partition-noniid").permutation(shards)
    assignments = []
    for i in range(n):
        own = deal[i * shards_per_client : (i + 1) * shards_per_client]
        idx = np.concatenate([order[s * size : (s + 1) * size] for s in own])
        assignments.append(np.sort(idx))
    return Partition(tuple(assignments))

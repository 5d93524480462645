"""Datasets, splitting and client partitioning.

CSV layout: header ``f0,...,f{d-1},label``, UTF-8, ``\\n`` line endings,
decimal floats and base-10 integer labels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import SeededRng, as_generator
from .errors import ArgumentError, DimensionError, GenerationError, IngestionError, PartitionError

# Default three-class composition used by the synthetic generator.
REFERENCE_CLASS_COUNTS = (684, 633, 810)

_CENTER_RETRIES = 200
_GROW_EVERY = 20
_PARTITION_RETRIES = 200


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels)
        if x.ndim != 2:
            raise DimensionError(f"features must be a matrix, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise DimensionError(f"{x.shape[0]} rows but {y.shape} labels")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            raise ArgumentError("labels must be integers")
        y = y.astype(np.int64)
        if self.n_classes < 2:
            raise ArgumentError(f"need at least 2 classes, got {self.n_classes}")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ArgumentError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(x)):
            raise ArgumentError("features must be finite")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


@dataclass(frozen=True)
class PartitionPlan:
    """Per-client sample indices into one training set."""

    assignments: tuple[tuple[int, ...], ...]

    @property
    def n_clients(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]

    def validate(self, n_samples: int) -> None:
        """Raise PartitionError unless this is a disjoint cover with nonempty clients."""
        seen = np.zeros(n_samples, dtype=np.int64)
        for k, idx in enumerate(self.assignments):
            if not idx:
                raise PartitionError(f"client {k} received no samples")
            arr = np.asarray(idx, dtype=np.int64)
            if arr.min() < 0 or arr.max() >= n_samples:
                raise PartitionError(f"client {k} holds an index outside [0, {n_samples})")
            np.add.at(seen, arr, 1)
        if np.any(seen != 1):
            raise PartitionError("assignments are not a disjoint cover of the index set")


def _plan(chunks) -> PartitionPlan:
    return PartitionPlan(tuple(tuple(int(i) for i in c) for c in chunks))


def blob_centers(
    n_classes: int,
    input_dim: int,
    separation: float,
    rng: SeededRng | np.random.Generator | int,
) -> np.ndarray:
    """Class centers on a sphere, pairwise >= ``separation`` apart.

    Directions are rejection-sampled on a sphere of radius ``0.75 * separation``;
    every ``_GROW_EVERY`` rejected draws the radius grows by 10% so crowded
    low-dimensional layouts still fit. Raises GenerationError when the
    bounded retries run out.
    """
    if n_classes < 2:
        raise ArgumentError("need at least 2 classes")
    if input_dim < 1:
        raise ArgumentError(f"input_dim must be positive, got {input_dim}")
    if not separation > 0:
        raise ArgumentError(f"separation must be positive, got {separation}")
    gen = as_generator(rng)
    radius = 0.75 * separation
    upper = np.triu_indices(n_classes, 1)
    for attempt in range(_CENTER_RETRIES):
        if attempt and attempt % _GROW_EVERY == 0:
            radius *= 1.1
        d = gen.normal(size=(n_classes, input_dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        centers = radius * d
        gaps = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
        if np.all(gaps[upper] >= separation):
            return centers
    raise GenerationError(
        f"could not place {n_classes} centers {separation} apart in {input_dim} dimensions "
        f"after {_CENTER_RETRIES} attempts"
    )


def sample_blobs(
    centers: np.ndarray,
    class_counts: Sequence[int],
    noise_std: float,
    rng: SeededRng | np.random.Generator | int,
) -> Dataset:
    """Draw ``class_counts[c]`` samples from N(centers[c], noise_std^2 I), class by class."""
    centers = np.asarray(centers, dtype=np.float64)
    counts = [int(c) for c in class_counts]
    if len(counts) != centers.shape[0]:
        raise ArgumentError(f"{len(counts)} class counts for {centers.shape[0]} centers")
    if any(c < 1 for c in counts):
        raise ArgumentError(f"class counts must be positive, got {counts}")
    if not noise_std >= 0:
        raise ArgumentError(f"noise_std must be nonnegative, got {noise_std}")
    gen = as_generator(rng)
    dim = centers.shape[1]
    xs, ys = [], []
    for c, count in enumerate(counts):
        xs.append(centers[c] + noise_std * gen.normal(size=(count, dim)))
        ys.append(np.full(count, c, dtype=np.int64))
    return Dataset(np.vstack(xs), np.concatenate(ys), len(counts))


def generate_blobs(
    class_counts: Sequence[int],
    input_dim: int,
    separation: float,
    noise_std: float,
    rng: SeededRng | np.random.Generator | int,
) -> Dataset:
    """Isotropic Gaussian blobs, one per class, with exactly the requested class counts."""
    counts = [int(c) for c in class_counts]
    if any(c < 1 for c in counts):
        raise ArgumentError(f"class counts must be positive, got {counts}")
    gen = as_generator(rng)
    centers = blob_centers(len(counts), input_dim, separation, gen)
    return sample_blobs(centers, counts, noise_std, gen)


def save_csv(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    header = [f"f{j}" for j in range(ds.input_dim)] + ["label"]
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row, label in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [str(int(label))])


def load_csv(path: str | Path, n_classes: int | None = None) -> Dataset:
    """Read a dataset; the class count defaults to ``max(label) + 1``.

    Row numbers in errors count the header as row 1.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError("file not found", path=str(path))
    feats, labels = [], []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError("empty file", path=str(path))
        d = len(header) - 1
        expected = [f"f{j}" for j in range(d)] + ["label"]
        if d < 1 or [h.strip() for h in header] != expected:
            raise IngestionError(f"header must be f0..f{{d-1}},label; got {header}", path=str(path), row=1)
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise IngestionError(f"expected {d + 1} cells, got {len(row)}", path=str(path), row=rownum)
            try:
                vals = [float(v) for v in row[:d]]
            except ValueError as exc:
                raise IngestionError(f"non-numeric feature ({exc})", path=str(path), row=rownum) from None
            if not all(math.isfinite(v) for v in vals):
                raise IngestionError("non-finite feature value", path=str(path), row=rownum)
            cell = row[d].strip()
            try:
                label = int(cell, 10)
            except ValueError:
                raise IngestionError(f"label {cell!r} is not a base-10 integer", path=str(path), row=rownum) from None
            if label < 0:
                raise IngestionError(f"negative label {label}", path=str(path), row=rownum)
            feats.append(vals)
            labels.append(label)
    if not labels:
        raise IngestionError("no data rows", path=str(path))
    inferred = max(labels) + 1
    if n_classes is None:
        n_classes = max(inferred, 2)
    elif inferred > n_classes:
        raise IngestionError(f"label {inferred - 1} outside [0, {n_classes})", path=str(path))
    return Dataset(np.array(feats, dtype=np.float64), np.array(labels, dtype=np.int64), n_classes)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(
    ds: Dataset,
    test_ratio: float,
    val_ratio: float,
    rng: SeededRng | np.random.Generator | int,
) -> tuple[Dataset, Dataset, Dataset]:
    """Per-class train/validation/test split.

    For each class with ``n`` samples (shuffled by ``rng``), the test set
    gets ``round(n * test_ratio)`` of them and the validation set
    ``round((n - n_test) * val_ratio)``; the rest stay in train. Rounding is
    half-up. Output sets list classes in ascending order.
    """
    if not 0 < test_ratio < 1:
        raise ArgumentError(f"test_ratio must lie in (0, 1), got {test_ratio}")
    if not 0 <= val_ratio < 1:
        raise ArgumentError(f"val_ratio must lie in [0, 1), got {val_ratio}")
    gen = as_generator(rng)
    parts: tuple[list, list, list] = ([], [], [])
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        if idx.size == 0:
            continue
        if idx.size < 3:
            raise ArgumentError(f"class {c} has {idx.size} samples; need at least 3")
        idx = idx[gen.permutation(idx.size)]
        n_test = round_half_up(idx.size * test_ratio)
        n_val = round_half_up((idx.size - n_test) * val_ratio)
        parts[2].append(idx[:n_test])
        parts[1].append(idx[n_test : n_test + n_val])
        parts[0].append(idx[n_test + n_val :])
    train, val, test = (ds.subset(np.concatenate(p)) for p in parts)
    return train, val, test


def partition_iid(train: Dataset, n_clients: int, rng: SeededRng | np.random.Generator | int) -> PartitionPlan:
    """Shuffle globally, then cut into contiguous chunks whose sizes differ by at most one."""
    n = len(train)
    if n_clients < 1:
        raise ArgumentError(f"need at least one client, got {n_clients}")
    if n_clients > n:
        raise ArgumentError(f"{n_clients} clients but only {n} samples")
    order = as_generator(rng).permutation(n)
    return _plan(np.array_split(order, n_clients))


def partition_dirichlet(
    train: Dataset,
    n_clients: int,
    alpha: float,
    rng: SeededRng | np.random.Generator | int,
    max_retries: int = _PARTITION_RETRIES,
) -> PartitionPlan:
    """Label-skewed split: each class is dealt to clients by Dirichlet(alpha) proportions.

    The whole draw is repeated until every client holds at least one sample.
    """
    if n_clients < 2:
        raise ArgumentError(f"Dirichlet partitioning needs at least 2 clients, got {n_clients}")
    if not alpha > 0:
        raise ArgumentError(f"alpha must be positive, got {alpha}")
    if n_clients > len(train):
        raise ArgumentError(f"{n_clients} clients but only {len(train)} samples")
    gen = as_generator(rng)
    by_class = [np.flatnonzero(train.labels == c) for c in range(train.n_classes)]
    for _ in range(max_retries):
        buckets: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
        for idx in by_class:
            if idx.size == 0:
                continue
            idx = idx[gen.permutation(idx.size)]
            props = gen.dirichlet(np.full(n_clients, alpha))
            cuts = (np.cumsum(props) * idx.size).astype(np.int64)[:-1]
            for k, piece in enumerate(np.split(idx, cuts)):
                buckets[k].append(piece)
        chunks = [np.concatenate(b) if b else np.empty(0, np.int64) for b in buckets]
        if all(c.size > 0 for c in chunks):
            return _plan(chunks)
    raise PartitionError(f"no Dirichlet(alpha={alpha}) draw left every one of {n_clients} clients nonempty "
                         f"in {max_retries} attempts")


def partition_shards(
    train: Dataset,
    n_clients: int,
    shards_per_client: int,
    rng: SeededRng | np.random.Generator | int,
) -> PartitionPlan:
    """Sort by label, cut into ``n_clients * shards_per_client`` shards and deal them at random."""
    if n_clients < 1 or shards_per_client < 1:
        raise ArgumentError("clients and shards_per_client must be positive")
    n_shards = n_clients * shards_per_client
    if n_shards > len(train):
        raise ArgumentError(f"{n_shards} shards but only {len(train)} samples")
    gen = as_generator(rng)
    order = np.argsort(train.labels, kind="stable")
    shards = np.array_split(order, n_shards)
    deal = gen.permutation(n_shards)
    chunks = [np.concatenate([shards[s] for s in deal[k::n_clients]]) for k in range(n_clients)]
    return _plan(chunks)

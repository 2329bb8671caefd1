"""Datasets: synthetic generation, CSV / IDX loading, preprocessing and IID sharding."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

SOURCES = ("synthetic_blobs", "csv_file", "idx_pair")
NORMALIZATIONS = ("to_unit_interval_signed", "binarize", "none")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """Malformed dataset file."""


class IdxMagicError(DataFormatError):
    pass


class IdxTruncatedError(DataFormatError):
    pass


class IdxCountMismatchError(DataFormatError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix ``inputs`` (n x features, float64) with integer class ``labels`` (n,)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels).astype(np.int64, copy=False)
        if inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-D, got shape {inputs.shape}")
        if labels.shape != (inputs.shape[0],):
            raise ValueError(f"{inputs.shape[0]} rows but labels of shape {labels.shape}")
        if inputs.shape[0] < 1:
            raise ValueError("dataset must contain at least one point")
        if not np.all(np.isfinite(inputs)):
            raise ValueError("dataset inputs contain NaN or Inf")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def num_features(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.inputs[idx], self.labels[idx])


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "synthetic_blobs"
    classes: int = 2
    features: int = 20
    train_size: int | None = 4000  # None: no cap (file sources only)
    test_size: int | None = 1000
    normalization: str = "none"
    path: str | None = None
    labels_path: str | None = None
    test_path: str | None = None
    test_labels_path: str | None = None
    # csv_file only
    skip_header: bool = False
    drop_last_columns: int = 0
    train_fraction: float = 0.8
    # synthetic_blobs only
    center_scale: float = 0.5
    cluster_std: float = 0.5

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown dataset source {self.source!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.classes < 2:
            raise ValueError("classes must be >= 2")
        if self.features < 1:
            raise ValueError("features must be >= 1")
        for name in ("train_size", "test_size"):
            size = getattr(self, name)
            if size is None and self.source == "synthetic_blobs":
                raise ValueError(f"synthetic_blobs needs an explicit {name}")
            if size is not None and size < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.drop_last_columns < 0:
            raise ValueError("drop_last_columns must be >= 0")
        if self.cluster_std <= 0 or self.center_scale <= 0:
            raise ValueError("cluster_std and center_scale must be > 0")


def _balanced_labels(n: int, classes: int) -> np.ndarray:
    counts = [n // classes + (1 if c < n % classes else 0) for c in range(classes)]
    return np.repeat(np.arange(classes), counts)


def generate_synthetic_blobs(spec: DatasetSpec, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Gaussian class clusters clipped to [-1, 1].

    Class centers are drawn uniformly from ``[-center_scale, center_scale]``
    per feature; points scatter around them with ``cluster_std``. Train and
    test share the centers. Every class gets ``n // classes`` points, the
    first ``n % classes`` classes one extra.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB10B]))
    centers = rng.uniform(-spec.center_scale, spec.center_scale, size=(spec.classes, spec.features))

    def draw(n):
        labels = _balanced_labels(n, spec.classes)
        x = centers[labels] + rng.normal(0.0, spec.cluster_std, size=(n, spec.features))
        order = rng.permutation(n)
        return LabeledDataset(np.clip(x[order], -1.0, 1.0), labels[order])

    train = draw(spec.train_size)
    test = draw(spec.test_size)
    return train, test


def normalize(inputs: np.ndarray, how: str) -> np.ndarray:
    """Apply a named normalization.

    ``binarize`` maps nonzero to 1; ``to_unit_interval_signed`` maps each
    column's [min, max] range linearly onto [-1, 1] (constant columns -> 0).
    """
    if how == "none":
        return inputs
    if how == "binarize":
        return (inputs != 0).astype(np.float64)
    if how == "to_unit_interval_signed":
        lo = inputs.min(axis=0)
        span = inputs.max(axis=0) - lo
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, 2.0 * (inputs - lo) / safe - 1.0, 0.0)
    raise ValueError(f"unknown normalization {how!r}")


def load_csv(path, spec: DatasetSpec) -> LabeledDataset:
    """Read a comma-separated file whose last column is the integer class label.

    ``spec.drop_last_columns`` feature columns are removed from the right
    (3 for Spambase, leaving the 54 keyword columns) before normalization.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    rows, labels = [], []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and spec.skip_header:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise DataFormatError(f"{path}:{lineno}: need at least one feature and a label")
            elif len(row) != width:
                raise DataFormatError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                values = [float(c) for c in row]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
            label = values[-1]
            if label != int(label) or label < 0:
                raise DataFormatError(f"{path}:{lineno}: label {label} is not a class index")
            rows.append(values[:-1])
            labels.append(int(label))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    x = np.asarray(rows, dtype=np.float64)
    if spec.drop_last_columns:
        if spec.drop_last_columns >= x.shape[1]:
            raise DataFormatError(f"{path}: cannot drop {spec.drop_last_columns} of {x.shape[1]} feature columns")
        x = x[:, : x.shape[1] - spec.drop_last_columns]
    return LabeledDataset(normalize(x, spec.normalization), np.asarray(labels))


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise IdxTruncatedError(f"{what}: expected {n} bytes, got {len(buf)}")
    return buf


def _open_maybe_gzip(path: Path):
    with open(path, "rb") as probe:
        is_gz = probe.read(2) == b"\x1f\x8b"
    return gzip.open(path, "rb") if is_gz else open(path, "rb")


def load_idx(images_path, labels_path, spec: DatasetSpec | None = None) -> LabeledDataset:
    """Read an IDX image/label pair (optionally gzipped).

    Pixels are mapped from [0, 255] to [-1, 1] via ``x / 127.5 - 1`` and each
    image is flattened row-major.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    with _open_maybe_gzip(images_path) as fh:
        magic, count = struct.unpack(">II", _read_exact(fh, 8, str(images_path)))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxMagicError(f"{images_path}: magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
        rows, cols = struct.unpack(">II", _read_exact(fh, 8, str(images_path)))
        payload = _read_exact(fh, count * rows * cols, str(images_path))
        if fh.read(1):
            raise IdxCountMismatchError(f"{images_path}: trailing bytes beyond {count} declared images")
    with _open_maybe_gzip(labels_path) as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, str(labels_path)))
        if magic != IDX_LABELS_MAGIC:
            raise IdxMagicError(f"{labels_path}: magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
        label_bytes = _read_exact(fh, n_labels, str(labels_path))
        if fh.read(1):
            raise IdxCountMismatchError(f"{labels_path}: trailing bytes beyond {n_labels} declared labels")
    if n_labels != count:
        raise IdxCountMismatchError(f"{count} images but {n_labels} labels")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    return LabeledDataset(pixels.astype(np.float64) / 127.5 - 1.0, labels)


def split_train_test(data: LabeledDataset, train_fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded random split; the train part gets ``round(train_fraction * n)`` points."""
    n = len(data)
    n_train = int(round(train_fraction * n))
    if not 1 <= n_train < n:
        raise ValueError(f"train fraction {train_fraction} leaves an empty split for n={n}")
    order = np.random.default_rng(np.random.SeedSequence([seed, 0x5B17])).permutation(n)
    return data.subset(order[:n_train]), data.subset(order[n_train:])


def shard_sizes(n: int, proportions: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of ``n`` points to the given proportions.

    Each shard first receives ``floor(p_k n)``; leftover points go one each
    to the largest fractional remainders, lower index first on ties.
    """
    p = np.asarray(proportions, dtype=np.float64)
    if p.size == 0 or np.any(p <= 0):
        raise ValueError("proportions must be positive")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"proportions must sum to 1 (got {p.sum()!r})")
    exact = p * n
    sizes = np.floor(exact).astype(int)
    remainder = exact - sizes
    leftover = n - int(sizes.sum())
    for i in sorted(range(len(p)), key=lambda i: (-remainder[i], i))[:leftover]:
        sizes[i] += 1
    return sizes.tolist()


def shard_iid(train: LabeledDataset, num_clients: int, proportions: Sequence[float] | None = None,
              seed: int = 0) -> list[LabeledDataset]:
    """Seeded shuffle followed by a contiguous split (equal sizes by default)."""
    n = len(train)
    if num_clients < 1:
        raise ValueError("need at least one client")
    if num_clients > n:
        raise ValueError(f"cannot shard {n} points across {num_clients} clients")
    if proportions is None:
        proportions = [1.0 / num_clients] * num_clients
    elif len(proportions) != num_clients:
        raise ValueError(f"{len(proportions)} proportions for {num_clients} clients")
    sizes = shard_sizes(n, proportions)
    if min(sizes) < 1:
        raise ValueError(f"proportions {list(proportions)} leave a client with no data")
    order = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED])).permutation(n)
    bounds = np.cumsum([0] + sizes)
    return [train.subset(order[lo:hi]) for lo, hi in zip(bounds[:-1], bounds[1:])]


def load_dataset(spec: DatasetSpec, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Build ``(train, test)`` for an experiment, capping each split at ``spec.train_size`` / ``spec.test_size``."""
    if spec.source == "synthetic_blobs":
        return generate_synthetic_blobs(spec, seed)
    if spec.source == "csv_file":
        if spec.path is None:
            raise ValueError("csv_file source needs dataset.path")
        full = load_csv(spec.path, spec)
        if spec.test_path is not None:
            train, test = full, load_csv(spec.test_path, spec)
        else:
            train, test = split_train_test(full, spec.train_fraction, seed)
    else:
        if not (spec.path and spec.labels_path and spec.test_path and spec.test_labels_path):
            raise ValueError("idx_pair source needs path, labels_path, test_path and test_labels_path")
        train = load_idx(spec.path, spec.labels_path, spec)
        test = load_idx(spec.test_path, spec.test_labels_path, spec)
    if train.num_features != spec.features:
        raise DataFormatError(f"dataset has {train.num_features} features, config says {spec.features}")
    if spec.train_size is not None and len(train) > spec.train_size:
        train = train.subset(np.arange(spec.train_size))
    if spec.test_size is not None and len(test) > spec.test_size:
        test = test.subset(np.arange(spec.test_size))
    return train, test

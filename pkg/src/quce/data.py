"""Tabular datasets: CSV ingestion, z-score normalization, splits, synthetic blobs."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def inverse(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) * self.std + self.mean

    def apply(self, data: "Dataset") -> "Dataset":
        return replace(data, features=self.transform(data.features), mean=self.mean,
                       std=self.std, normalized=True)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Normalizer":
        return cls(np.asarray(doc["mean"], dtype=np.float64),
                   np.asarray(doc["std"], dtype=np.float64))


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    split: str = "all"
    normalized: bool = False
    # row index of each instance in the source file
    row_ids: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        object.__setattr__(self, "features", X)
        if X.ndim != 2:
            raise DataError(f"features must be a 2-D matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"{y.shape[0] if y.ndim else 0} labels for {X.shape[0]} rows")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain NaN or Inf")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 or 1")
        object.__setattr__(self, "labels", y.astype(np.int64))
        if len(self.feature_names) != X.shape[1]:
            raise DataError("feature name count does not match column count")
        if self.row_ids is None:
            object.__setattr__(self, "row_ids", np.arange(X.shape[0]))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, split: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, features=self.features[idx], labels=self.labels[idx],
                       row_ids=self.row_ids[idx], split=split or self.split)


def load_csv(path: str | Path, label_column: str) -> Dataset:
    """Read a comma-separated file with a header row and a 0/1 label column.

    Constant feature columns are dropped with a warning.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not found")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            parsed = []
            for col, cell in zip(header, row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {lineno}, column {col!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    li = header.index(label_column)
    labels = table[:, li]
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError(f"{path}: label column {label_column!r} must hold 0/1 values")
    keep = [j for j in range(len(header)) if j != li]
    X = table[:, keep]
    names = [header[j] for j in keep]
    const = np.all(X == X[0], axis=0)
    if np.any(const):
        dropped = [n for n, c in zip(names, const) if c]
        log.warning("dropping constant columns: %s", ", ".join(dropped))
        X = X[:, ~const]
        names = [n for n, c in zip(names, const) if not c]
    return Dataset(X, labels.astype(np.int64), names)


def write_csv(data: Dataset, path: str | Path, label_column: str = "label") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*data.feature_names, label_column])
        for row, y in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in row] + [int(y)])


def fit_normalizer(data: Dataset) -> Normalizer:
    std = data.features.std(axis=0)
    if np.any(std == 0):
        bad = [n for n, s in zip(data.feature_names, std) if s == 0]
        raise DataError(f"zero standard deviation in: {', '.join(bad)}")
    return Normalizer(data.features.mean(axis=0), std)


def normalize(data: Dataset) -> tuple[Dataset, Normalizer]:
    """Z-score ``data`` with its own statistics (call on the train split)."""
    norm = fit_normalizer(data)
    return norm.apply(data), norm


def denormalize(x: np.ndarray, norm: Normalizer) -> np.ndarray:
    return norm.inverse(x)


def train_test_split(data: Dataset, fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 < fraction < 1:
        raise DataError("fraction must lie strictly between 0 and 1")
    n_train = int(round(fraction * data.n))
    if n_train == 0 or n_train == data.n:
        raise DataError(f"split of {data.n} rows at {fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(data.n)
    train = data.subset(np.sort(perm[:n_train]), "train")
    test = data.subset(np.sort(perm[n_train:]), "test")
    for part in (train, test):
        if len(np.unique(part.labels)) < 2:
            raise DataError(f"{part.split} split contains a single class")
    return train, test


def synthetic_blobs(n: int = 200, n_features: int = 2, separation: float = 6.0,
                    seed: int = 0) -> Dataset:
    """Two unit-covariance Gaussian clusters at +-separation/2 on the first axis."""
    if n < 4 or n_features < 2:
        raise DataError("need n >= 4 and n_features >= 2")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    X = rng.standard_normal((n, n_features))
    X[:, 0] += np.where(labels == 1, separation / 2, -separation / 2)
    names = [f"x{j}" for j in range(n_features)]
    return Dataset(X, labels, names)


def load_wbc() -> Dataset:
    """Wisconsin diagnostic breast cancer data (569 x 30) bundled with scikit-learn.

    Label 1 is benign, 0 malignant, as in the scikit-learn copy.
    """
    from sklearn.datasets import load_breast_cancer

    raw = load_breast_cancer()
    names = [n.replace(" ", "_") for n in raw.feature_names]
    return Dataset(raw.data.astype(np.float64), raw.target.astype(np.int64), names)

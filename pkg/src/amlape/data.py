"""Observed samples and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Dataset:
    """An ``n x p`` covariate matrix ``X`` with an ``n``-vector of responses ``Y``."""

    X: np.ndarray
    Y: np.ndarray
    feature_names: list[str] | None = None
    binary: bool = field(default=False, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float).ravel()
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n, p = self.X.shape
        if n < 2 or p < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if self.Y.shape[0] != n:
            raise ValueError(f"Y has {self.Y.shape[0]} entries but X has {n} rows")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ValueError("X and Y must be finite")
        if self.feature_names is not None:
            self.feature_names = list(self.feature_names)
            if len(self.feature_names) != p:
                raise ValueError("feature_names length does not match the number of columns")
        self.binary = bool(np.all((self.Y == 0) | (self.Y == 1)))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def check_response_range(self):
        """Binary-outcome links need responses in [0, 1]."""
        if np.any(self.Y < 0) or np.any(self.Y > 1):
            raise ValueError("responses must lie in [0, 1] for logistic/probit links")

    def subset(self, idx) -> Dataset:
        return Dataset(self.X[idx], self.Y[idx], self.feature_names)

    def column_index(self, name: str | int) -> int:
        """Resolve a focal column given by name or 0-based position."""
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.p:
                raise KeyError(f"column index {name} out of range for p={self.p}")
            return int(name)
        if self.feature_names and name in self.feature_names:
            return self.feature_names.index(name)
        raise KeyError(f"column {name!r} not found")


class ColumnError(KeyError):
    pass


def read_csv(path: str | Path, response: str) -> Dataset:
    """Load a dataset from a CSV with a header row.

    The ``response`` column becomes ``Y``; all other columns are features, in
    file order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path} is empty") from None
        rows = [row for row in reader if row]
    if response not in header:
        raise ColumnError(f"response column {response!r} not in {path}")
    r = header.index(response)
    try:
        table = np.array([[float(v) for v in row] for row in rows], dtype=float)
    except ValueError as exc:
        raise ValueError(f"non-numeric entry in {path}: {exc}") from None
    if table.ndim != 2 or table.shape[1] != len(header):
        raise ValueError(f"ragged rows in {path}")
    keep = [k for k in range(len(header)) if k != r]
    return Dataset(table[:, keep], table[:, r], [header[k] for k in keep])


def write_csv(data: Dataset, path: str | Path, response: str = "y"):
    names = data.feature_names or [f"x{k + 1}" for k in range(data.p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*names, response])
        for x, y in zip(data.X, data.Y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])

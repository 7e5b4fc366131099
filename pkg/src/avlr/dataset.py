"""Incomplete-data container and the CSV format used by the CLI.

CSV: comma separated, UTF-8, one header row; a label column (named on the
command line) holding 0/1; every other column is a real covariate where an
empty cell or the token ``NaN`` (any case) marks a missing value.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray           # (n, d), NaN where missing
    R: np.ndarray           # (n, d), 1 observed / 0 missing
    y: np.ndarray           # (n,) in {0, 1}
    X_true: np.ndarray | None = None
    columns: list[str] | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.int8)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.shape != self.R.shape or self.X.ndim != 2:
            raise DataError("X and R must be (n, d) arrays of equal shape")
        if self.y.shape != (self.X.shape[0],):
            raise DataError("y must have one label per row")
        if not np.isin(self.y, (0, 1)).all():
            raise DataError("labels must be binary")
        self.X = np.where(self.R == 1, self.X, np.nan)

    @classmethod
    def from_complete(cls, X, y, R=None) -> "Dataset":
        X = np.asarray(X, dtype=np.float64)
        R = np.ones_like(X, dtype=np.int8) if R is None else R
        return cls(X, R, y, X_true=X.copy())

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def x_filled(self) -> np.ndarray:
        return np.where(self.R == 1, self.X, 0.0)

    def missing_rate(self, axis=0):
        return 1.0 - self.R.mean(axis=axis)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.R[idx], self.y[idx],
                       None if self.X_true is None else self.X_true[idx], self.columns)

    def observed_means(self) -> np.ndarray:
        cnt = self.R.sum(axis=0)
        if np.any(cnt == 0):
            bad = np.flatnonzero(cnt == 0).tolist()
            raise DataError(f"columns {bad} have no observed value")
        return self.x_filled.sum(axis=0) / cnt


def _is_missing(cell: str) -> bool:
    c = cell.strip()
    return c == "" or c.lower() == "nan"


def read_csv_dataset(path, label_column: str, require_label: bool = True) -> Dataset:
    """Parse the CSV format above. With ``require_label=False`` a file without
    the label column is accepted and every label is set to 0."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column in header:
            li = header.index(label_column)
        elif require_label:
            raise DataError(f"{path}: no label column {label_column!r}")
        else:
            li = None
        cov_cols = [c for i, c in enumerate(header) if i != li]
        X, R, y = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
            lab = "0" if li is None else rec[li].strip()
            try:
                lab_v = float(lab)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-binary label {lab!r}") from None
            if lab_v not in (0.0, 1.0):
                raise DataError(f"{path}:{lineno}: non-binary label {lab!r}")
            row, mask = [], []
            for i, cell in enumerate(rec):
                if i == li:
                    continue
                if _is_missing(cell):
                    row.append(np.nan)
                    mask.append(0)
                    continue
                try:
                    row.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {header[i]!r}: "
                                    f"cannot parse {cell!r}") from None
                mask.append(1)
            X.append(row)
            R.append(mask)
            y.append(int(lab_v))
    d = len(cov_cols)
    ds = Dataset(np.array(X, dtype=np.float64).reshape(-1, d),
                 np.array(R, dtype=np.int8).reshape(-1, d), np.array(y, dtype=np.int64),
                 columns=cov_cols)
    log.info("read %s: %d rows, missing rate per column %s", path, ds.n,
             np.round(ds.missing_rate(), 4).tolist())
    return ds


def write_csv_dataset(ds: Dataset, path, label_column: str = "y", complete=False):
    """Write ``ds`` (or its ground truth when ``complete``) as CSV."""
    cols = ds.columns or [f"x{j + 1}" for j in range(ds.d)]
    X = ds.X_true if complete else ds.X
    if X is None:
        raise DataError("dataset has no ground-truth matrix")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols + [label_column])
        for i in range(ds.n):
            cells = ["" if (not complete and ds.R[i, j] == 0) else repr(float(X[i, j]))
                     for j in range(ds.d)]
            w.writerow(cells + [int(ds.y[i])])

"""Loading, validation and preprocessing of spectrometric datasets.

A :class:`Dataset` is an immutable (samples x variables) matrix plus a
scalar target per sample and optional per-variable labels (wavelengths).
CSV is the canonical interchange format: comma separator, '.' decimal
point, UTF-8, with an optional first header row carrying the labels.
Rows containing any non-numeric cell abort the load; silently dropping
rows would corrupt train/test splits downstream.
"""

from __future__ import annotations

import csv
import json
import math
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

TECATOR_URL = "http://lib.stat.cmu.edu/datasets/tecator"

# Statlib Tecator layout: 240 records of 125 numbers each
# (100 absorbances, 22 principal components, moisture, fat, protein).
_TECATOR_RECORD_LEN = 125
_TECATOR_N_CHANNELS = 100
_TECATOR_FAT_INDEX = 123
_TECATOR_N_TRAIN = 172
_TECATOR_N_TEST = 43
_TECATOR_WAVELENGTHS = [850.0 + 2.0 * i for i in range(_TECATOR_N_CHANNELS)]


@dataclass(frozen=True)
class Dataset:
    """Immutable regression dataset: X is (N, M), y is (N,).

    Safe to share across concurrent workers; the arrays are marked
    read-only at construction.
    """

    X: np.ndarray
    y: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        if X.ndim != 2:
            raise DataError(f"X must be 2-dimensional, got shape {X.shape}")
        if y.ndim != 1:
            raise DataError(f"y must be 1-dimensional, got shape {y.shape}")
        if X.shape[0] != y.shape[0]:
            raise DataError(
                f"row count mismatch: X has {X.shape[0]} rows, y has {y.shape[0]}"
            )
        if not np.all(np.isfinite(X)):
            raise DataError("X contains NaN or infinite entries")
        if not np.all(np.isfinite(y)):
            raise DataError("y contains NaN or infinite entries")
        if self.labels is not None:
            labels = tuple(str(tag) for tag in self.labels)
            if len(labels) != X.shape[1]:
                raise DataError(
                    f"{len(labels)} labels for {X.shape[1]} variables"
                )
            object.__setattr__(self, "labels", labels)
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_variables(self) -> int:
        return self.X.shape[1]

    def take_rows(self, indices) -> "Dataset":
        """New Dataset restricted to the given sample rows."""
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.X[idx], self.y[idx], self.labels)

    def take_variables(self, indices) -> "Dataset":
        """New Dataset restricted to the given variable columns."""
        idx = np.asarray(indices, dtype=int)
        labels = None
        if self.labels is not None:
            labels = tuple(self.labels[i] for i in idx)
        return Dataset(self.X[:, idx], self.y, labels)


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/test row indices into a Dataset."""

    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        train = tuple(int(i) for i in self.train_indices)
        test = tuple(int(i) for i in self.test_indices)
        if not train or not test:
            raise DataError("both train and test index lists must be non-empty")
        if set(train) & set(test):
            raise DataError("train and test indices overlap")
        if min(train + test) < 0:
            raise DataError("negative sample index in split")
        object.__setattr__(self, "train_indices", train)
        object.__setattr__(self, "test_indices", test)

    def validate_for(self, n_samples: int) -> None:
        top = max(self.train_indices + self.test_indices)
        if top >= n_samples:
            raise DataError(
                f"split references sample {top} but dataset has {n_samples} rows"
            )


def load_split(path: str | Path) -> SplitSpec:
    """Read a JSON split file: {"train": [...], "test": [...]}."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except OSError as exc:
        raise DataError(f"cannot read split file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"split file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "train" not in doc or "test" not in doc:
        raise DataError(f"split file {path} must map 'train' and 'test' to index lists")
    return SplitSpec(tuple(doc["train"]), tuple(doc["test"]))


def save_split(split: SplitSpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(
            {"train": list(split.train_indices), "test": list(split.test_indices)},
            handle,
            indent=2,
            sort_keys=True,
        )
        handle.write("\n")


def _parse_cell(text: str, row: int, column: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(
            f"row {row}, column {column}: could not parse {text!r} as a number"
        ) from None
    if math.isnan(value) or math.isinf(value):
        raise DataError(f"row {row}, column {column}: non-finite value {text!r}")
    return value


def load_csv(path: str | Path, target_column: str | int = "target") -> Dataset:
    """Load a Dataset from CSV.

    The first row is treated as a header when any of its cells fails to
    parse as a number. ``target_column`` selects the target by header
    name or by 0-based column position.
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as handle:
            rows = [row for row in csv.reader(handle) if row]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")

    header: list[str] | None = None
    first = rows[0]
    try:
        for cell in first:
            float(cell)
    except ValueError:
        header = [cell.strip() for cell in first]
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path} has a header but no data rows")

    width = len(rows[0])
    if header is not None and len(header) != width:
        raise DataError(
            f"header has {len(header)} columns but data rows have {width}"
        )

    if isinstance(target_column, str) and header is not None and target_column in header:
        target_idx = header.index(target_column)
    else:
        try:
            target_idx = int(target_column)
        except (TypeError, ValueError):
            raise DataError(
                f"target column {target_column!r} not found in header"
            ) from None
        if not -width <= target_idx < width:
            raise DataError(
                f"target column index {target_idx} out of range for {width} columns"
            )
        target_idx %= width

    matrix = np.empty((len(rows), width), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(
                f"row {i}: expected {width} columns, found {len(row)}"
            )
        for j, cell in enumerate(row):
            matrix[i, j] = _parse_cell(cell, i, j)

    keep = [j for j in range(width) if j != target_idx]
    if not keep:
        raise DataError("dataset has no input variables besides the target")
    labels = None
    if header is not None:
        labels = tuple(header[j] for j in keep)
    return Dataset(matrix[:, keep], matrix[:, target_idx], labels)


def save_csv(d: Dataset, path: str | Path, target_label: str = "target") -> None:
    """Write a Dataset as CSV with a header row; target is the last column."""
    labels = d.labels or tuple(f"x{j}" for j in range(d.n_variables))
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(list(labels) + [target_label])
        for i in range(d.n_samples):
            writer.writerow(
                [repr(float(v)) for v in d.X[i]] + [repr(float(d.y[i]))]
            )


def normalize_spectrum_rows(x: np.ndarray) -> np.ndarray:
    """Row-standardized matrix with the removed mean/std appended per row."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] < 2:
        raise DataError("spectrum normalization needs at least 2 variables per row")
    means = x.mean(axis=1)
    stds = x.std(axis=1, ddof=1)
    degenerate = np.flatnonzero(stds == 0.0)
    if degenerate.size:
        raise DataError(
            f"row {int(degenerate[0])} has a constant spectrum (zero standard deviation)"
        )
    shape = (x - means[:, None]) / stds[:, None]
    return np.hstack([shape, means[:, None], stds[:, None]])


def normalize_spectra(d: Dataset) -> Dataset:
    """Standardize each spectrum (row) to zero mean, unit variance.

    The removed row mean and row standard deviation are appended as two
    extra variables so no information is lost. Standard deviation uses
    the sample (N-1) convention.
    """
    out = normalize_spectrum_rows(d.X)
    labels = None
    if d.labels is not None:
        labels = d.labels + ("row_mean", "row_std")
    return Dataset(out, d.y, labels)


@dataclass(frozen=True)
class ColumnWhitener:
    """Column-wise affine map fitted on training rows only."""

    means: np.ndarray
    stds: np.ndarray

    def apply(self, d: Dataset) -> Dataset:
        if d.n_variables != self.means.shape[0]:
            raise DataError(
                f"whitener fitted on {self.means.shape[0]} variables, "
                f"dataset has {d.n_variables}"
            )
        return Dataset((d.X - self.means) / self.stds, d.y, d.labels)


def fit_column_whitener(train: Dataset) -> ColumnWhitener:
    """Fit per-column zero-mean unit-variance scaling on training rows."""
    if train.n_samples < 2:
        raise DataError("column whitening needs at least 2 training rows")
    means = train.X.mean(axis=0)
    stds = train.X.std(axis=0, ddof=1)
    degenerate = np.flatnonzero(stds == 0.0)
    if degenerate.size:
        raise DataError(
            f"column {int(degenerate[0])} has zero variance on the training rows"
        )
    means = means.copy()
    stds = stds.copy()
    means.flags.writeable = False
    stds.flags.writeable = False
    return ColumnWhitener(means, stds)


def whiten_columns(d: Dataset, whitener: ColumnWhitener | None = None) -> Dataset:
    """Whiten columns; statistics come from ``whitener`` when given.

    Call with just ``d`` to fit on the same rows being transformed, or
    pass a whitener fitted on the training rows to transform test rows
    with the training statistics.
    """
    if whitener is None:
        whitener = fit_column_whitener(d)
    return whitener.apply(d)


def parse_tecator(raw: str) -> tuple[Dataset, Dataset]:
    """Convert the statlib Tecator archive text into train/test Datasets.

    All numeric tokens after the prose header are concatenated and
    reshaped into 125-number records; the 100 absorbance channels become
    X and the fat content (percent) becomes y. Samples 1..172 are the
    training set, 173..215 the test set; the trailing extrapolation
    samples are dropped.
    """
    values: list[float] = []
    for line in raw.splitlines():
        tokens = line.split()
        if not tokens:
            continue
        try:
            parsed = [float(tok) for tok in tokens]
        except ValueError:
            if values:
                raise DataError(
                    f"non-numeric line inside Tecator data section: {line!r}"
                ) from None
            continue
        values.extend(parsed)
    if not values or len(values) % _TECATOR_RECORD_LEN != 0:
        raise DataError(
            f"Tecator data section has {len(values)} numbers, "
            f"not a multiple of {_TECATOR_RECORD_LEN}"
        )
    records = np.asarray(values, dtype=np.float64).reshape(-1, _TECATOR_RECORD_LEN)
    if records.shape[0] < _TECATOR_N_TRAIN + _TECATOR_N_TEST:
        raise DataError(
            f"Tecator archive has {records.shape[0]} samples, "
            f"expected at least {_TECATOR_N_TRAIN + _TECATOR_N_TEST}"
        )
    X = records[:, :_TECATOR_N_CHANNELS]
    fat = records[:, _TECATOR_FAT_INDEX]
    labels = tuple(f"{w:.0f}" for w in _TECATOR_WAVELENGTHS)
    train = Dataset(X[:_TECATOR_N_TRAIN], fat[:_TECATOR_N_TRAIN], labels)
    stop = _TECATOR_N_TRAIN + _TECATOR_N_TEST
    test = Dataset(X[_TECATOR_N_TRAIN:stop], fat[_TECATOR_N_TRAIN:stop], labels)
    return train, test


def fetch_tecator(dest_dir: str | Path, url: str = TECATOR_URL) -> tuple[Path, Path]:
    """Download the Tecator archive and write train/test CSV files.

    Returns the paths of the written files. Raises DataError when the
    archive cannot be downloaded (for example on machines without
    network access); in that case the CSVs can be produced elsewhere and
    copied into ``dest_dir``.
    """
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    try:
        with urllib.request.urlopen(url, timeout=60) as response:
            raw = response.read().decode("utf-8", errors="replace")
    except Exception as exc:
        raise DataError(f"could not download Tecator archive from {url}: {exc}") from exc
    train, test = parse_tecator(raw)
    train_path = dest / "tecator_train.csv"
    test_path = dest / "tecator_test.csv"
    save_csv(train, train_path, target_label="fat")
    save_csv(test, test_path, target_label="fat")
    return train_path, test_path

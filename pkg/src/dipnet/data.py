"""CSV ingestion, train/test/OOD splitting, normalization and synthetic data."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass
class Schema:
    target: str = "y"
    features: Optional[list] = None  # None: every non-target column
    ood_column: Optional[str] = None
    ood_threshold: Optional[float] = None
    ood_quantile: Optional[float] = None


@dataclass
class Table:
    columns: list
    X: np.ndarray
    y: np.ndarray
    dropped: int = 0

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise DataError(f"unknown column {name!r}")
        return self.X[:, self.columns.index(name)]


def _parse(token: str) -> float:
    token = token.strip()
    if token == "" or token.upper() in ("NA", "NAN", "NULL", "NONE"):
        return math.nan
    try:
        return float(token)
    except ValueError:
        return math.nan


def load_csv(path, schema: Schema = Schema()) -> Table:
    """Read a header-row CSV into a numeric table.

    Rows whose target or any selected feature is missing or non-numeric are
    dropped; the count is kept on ``Table.dropped``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if schema.target not in header:
        raise DataError(f"{path}: target column {schema.target!r} not in header {header}")
    features = schema.features or [h for h in header if h != schema.target]
    missing = [f for f in features if f not in header]
    if missing:
        raise DataError(f"{path}: feature columns {missing} not in header")
    idx = [header.index(f) for f in features]
    t_idx = header.index(schema.target)

    X, y, dropped = [], [], 0
    for row in rows[1:]:
        if not row:
            continue
        if len(row) != len(header):
            dropped += 1
            continue
        values = [_parse(row[i]) for i in idx]
        target = _parse(row[t_idx])
        if math.isnan(target) or any(math.isnan(v) for v in values):
            dropped += 1
            continue
        X.append(values)
        y.append(target)
    if dropped:
        log.info("%s: dropped %d row(s) with missing or non-numeric values", path, dropped)
    if not y:
        raise DataError(f"{path}: no usable rows")
    return Table(list(features), np.array(X, dtype=np.float64).reshape(len(y), len(features)),
                 np.array(y, dtype=np.float64), dropped)


def write_csv(table: Table, path, target: str = "y") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(table.columns) + [target])
        for xi, yi in zip(table.X, table.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


@dataclass
class Part:
    X: np.ndarray
    y: np.ndarray
    rows: np.ndarray  # indices into the source table

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class DatasetSplit:
    """Normalized partitions plus the train-only statistics used to build them."""

    train: Part
    val: Part
    test_id: Part
    test_ood: Part
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    columns: list = field(default_factory=list)
    dropped_columns: list = field(default_factory=list)

    def denormalize_y(self, y) -> np.ndarray:
        return np.asarray(y) * self.y_std + self.y_mean

    def normalize_x(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64)[:, self.keep] - self.x_mean) / self.x_std

    @property
    def keep(self) -> list:
        return [i for i, c in enumerate(self.columns) if c not in self.dropped_columns]


def _ood_mask(table: Table, schema: Schema) -> np.ndarray:
    if schema.ood_column is None:
        return np.zeros(len(table.y), dtype=bool)
    col = table.column(schema.ood_column)
    if schema.ood_threshold is not None:
        threshold = schema.ood_threshold
    elif schema.ood_quantile is not None:
        threshold = float(np.quantile(col, schema.ood_quantile))
    else:
        raise DataError("ood_column needs ood_threshold or ood_quantile")
    return col > threshold


def split(table: Table, test_fraction: float, seed: int, schema: Schema = Schema(),
          train_fraction: float = 1.0, val_fraction: float = 0.0,
          normalize_target: bool = True) -> DatasetSplit:
    """Seeded partition into train / val / in-distribution test / OOD test.

    OOD rows (``ood_column > threshold``) are removed before shuffling.  The
    remaining rows are shuffled, ``test_fraction`` of them form ``test_id``
    and ``val_fraction`` of them ``val``; ``train_fraction`` subsamples what
    is left for training.  Features (and the target) are z-scored with
    training statistics only.
    """
    if not 0 < test_fraction < 1:
        raise DataError("test_fraction must be in (0, 1)")
    if not 0 < train_fraction <= 1:
        raise DataError("train_fraction must be in (0, 1]")
    if not 0 <= val_fraction < 1 - test_fraction:
        raise DataError("val_fraction must be in [0, 1 - test_fraction)")
    ood = _ood_mask(table, schema)
    ood_rows = np.flatnonzero(ood)
    pool = np.flatnonzero(~ood)
    rng = np.random.default_rng([int(seed), 0x5B117])
    pool = pool[rng.permutation(len(pool))]
    n_test = int(round(test_fraction * len(pool)))
    n_val = int(round(val_fraction * len(pool)))
    test_rows = pool[:n_test]
    val_rows = pool[n_test:n_test + n_val]
    train_rows = pool[n_test + n_val:]
    train_rows = train_rows[:int(math.ceil(train_fraction * len(train_rows)))]
    if len(train_rows) == 0 or len(test_rows) == 0:
        raise DataError(f"split leaves {len(train_rows)} train and {len(test_rows)} test rows")

    X_train = table.X[train_rows]
    std = X_train.std(axis=0)
    keep = std > 0
    dropped_cols = [c for c, k in zip(table.columns, keep) if not k]
    if dropped_cols:
        log.info("dropping constant columns %s", dropped_cols)
    x_mean = X_train[:, keep].mean(axis=0)
    x_std = std[keep]
    if normalize_target:
        y_mean = float(table.y[train_rows].mean())
        y_std = float(table.y[train_rows].std()) or 1.0
    else:
        y_mean, y_std = 0.0, 1.0

    def part(rows):
        X = (table.X[rows][:, keep] - x_mean) / x_std
        return Part(X, (table.y[rows] - y_mean) / y_std, rows)

    return DatasetSplit(part(train_rows), part(val_rows), part(test_rows), part(ood_rows),
                        x_mean, x_std, y_mean, y_std, list(table.columns), dropped_cols)


def synth_weights(d: int, seed: int):
    rng = np.random.default_rng([int(seed), 0xD1A])
    w1 = rng.standard_normal(d) / math.sqrt(d)
    w2 = rng.standard_normal(d)
    return w1, w2


def synth_target(X: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    d = X.shape[1]
    return np.sin(X @ w1) + 0.5 * (X @ w2) ** 2 / d


def synth_regression(n: int, d: int, noise_sigma: float, seed: int,
                     ood_shift: float = 0.0, ood_fraction: float = 0.0) -> Table:
    """Synthetic regression table ``y = sin(w1.x) + 0.5 (w2.x)^2 / d + noise``.

    ``x ~ N(0, I_d)``.  With ``ood_fraction > 0`` the last rows get
    ``ood_shift`` added to every feature and a ``domain`` column set to 1.
    """
    if n < 10 or d < 1:
        raise DataError("synth_regression needs n >= 10 and d >= 1")
    w1, w2 = synth_weights(d, seed)
    rng = np.random.default_rng([int(seed), 0xDA7A])
    X = rng.standard_normal((n, d))
    n_ood = int(round(ood_fraction * n))
    domain = np.zeros(n)
    if n_ood:
        X[n - n_ood:] += ood_shift
        domain[n - n_ood:] = 1.0
    noise = rng.standard_normal(n) * noise_sigma
    y = synth_target(X, w1, w2) + noise
    columns = [f"x{i}" for i in range(d)]
    if n_ood:
        return Table(columns + ["domain"], np.column_stack([X, domain]), y)
    return Table(columns, X, y)

"""Datasets, deterministic index splits, empirical quantiles, CSV ingestion."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import RngStream

# Absorbs float roundoff when a quantile level or split fraction sits exactly
# on a rank boundary (e.g. phi written as a decimal literal equal to k/n).
_RANK_EPS = 1e-9


@dataclass(frozen=True)
class Dataset:
    """A feature matrix with its target vector, validated on construction."""

    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...] = ()
    target_name: str = "y"

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        y = np.asarray(self.targets, dtype=np.float64).ravel()
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValueError("features must be a 2-D matrix with at least one column")
        if X.shape[0] != y.shape[0]:
            raise ValueError(
                f"row mismatch: {X.shape[0]} feature rows vs {y.shape[0]} targets"
            )
        if not np.isfinite(X).all() or not np.isfinite(y).all():
            raise ValueError("non-finite entries in dataset")
        names = self.feature_names or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("feature_names length does not match column count")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "feature_names", tuple(names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            self.features[idx], self.targets[idx], self.feature_names, self.target_name
        )


@dataclass(frozen=True)
class IndexSplit:
    """Disjoint train/calibration index sets, with the calibration set further
    divided into a partitioning part and a cutoff part (equal to the whole
    calibration set when the inner split is skipped)."""

    train: np.ndarray
    cal: np.ndarray
    part: np.ndarray
    cut: np.ndarray


def empirical_quantile(values, phi: float) -> float:
    """Smallest element t of `values` with at least a `phi` fraction of the
    sample at or below t. Always returns a member of the sample.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("empty sample")
    if not (0.0 < phi <= 1.0):
        raise ValueError(f"invalid level: {phi!r}")
    rank = math.ceil(phi * v.size - _RANK_EPS)
    rank = min(max(rank, 1), v.size)
    return float(np.partition(v, rank - 1)[rank - 1])


def split_indices(
    n: int,
    fractions: tuple[float, float, float] = (0.4, 0.4, 0.2),
    *,
    inner_split: bool = False,
    inner_fraction: float = 0.5,
    rng: RngStream,
) -> tuple[IndexSplit, np.ndarray]:
    """Randomly partition [0, n) into train/cal/test index sets.

    Calibration and test sets get floor(fraction * n) rows each; remainder
    rows go to train so calibration never exceeds its nominal share. With
    `inner_split` the calibration set is further divided into partitioning
    and cutoff subsets; otherwise both equal the full calibration set.

    Returns (IndexSplit, test indices).
    """
    if n < 3:
        raise ValueError("need at least 3 rows to split")
    f_train, f_cal, f_test = fractions
    if min(f_train, f_cal, f_test) <= 0:
        raise ValueError("all fractions must be positive")
    if abs(f_train + f_cal + f_test - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    n_cal = int(math.floor(f_cal * n + _RANK_EPS))
    n_test = int(math.floor(f_test * n + _RANK_EPS))
    n_train = n - n_cal - n_test

    perm = rng.generator().permutation(n)
    train = np.sort(perm[:n_train])
    cal_perm = perm[n_train : n_train + n_cal]
    test = np.sort(perm[n_train + n_cal :])
    cal = np.sort(cal_perm)
    if inner_split:
        if not (0.0 < inner_fraction < 1.0):
            raise ValueError("inner_fraction must lie in (0, 1)")
        n_part = int(math.floor(inner_fraction * n_cal + _RANK_EPS))
        part = np.sort(cal_perm[:n_part])
        cut = np.sort(cal_perm[n_part:])
    else:
        part = cal
        cut = cal
    return IndexSplit(train=train, cal=cal, part=part, cut=cut), test


def load_csv(path, target: str | None = None) -> Dataset:
    """Read a dataset from a headed CSV file.

    `target` names the target column; by default the last column is used.
    Every other cell must parse as a finite real number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2:
            raise ValueError(f"{path}: need at least one feature column and a target")
        if target is None:
            target_idx = len(header) - 1
        else:
            try:
                target_idx = header.index(target)
            except ValueError:
                raise ValueError(f"{path}: missing target column {target!r}") from None
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: line {line_no}: expected {len(header)} cells, got {len(row)}"
                )
            parsed = []
            for j, cell in enumerate(row):
                try:
                    value = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: line {line_no}, column {header[j]!r}: "
                        f"cannot parse {cell!r} as a number"
                    ) from None
                if not math.isfinite(value):
                    raise ValueError(
                        f"{path}: line {line_no}, column {header[j]!r}: "
                        f"non-finite value {cell!r}"
                    )
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    matrix = np.asarray(rows, dtype=np.float64)
    feat_cols = [j for j in range(len(header)) if j != target_idx]
    return Dataset(
        features=matrix[:, feat_cols],
        targets=matrix[:, target_idx],
        feature_names=tuple(header[j] for j in feat_cols),
        target_name=header[target_idx],
    )


def save_csv(dataset: Dataset, path) -> None:
    """Write a dataset as CSV; reloading reproduces the exact same matrix."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.feature_names) + [dataset.target_name])
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(repr(float(dataset.targets[i])))
            writer.writerow(row)

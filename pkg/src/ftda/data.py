"""Datasets: CSV ingestion, standardization, splitting, synthetic generation,
and label corruption.

All tabular data lives in float64 numpy arrays. A Dataset is immutable after
construction and safe to share across workers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .prng import TAG_FLIP, TAG_SPLIT, TAG_SUBSET, TAG_SYNTH, stream

REGRESSION = "regression"
CLASSIFICATION = "classification"


class DataError(ValueError):
    """Malformed input data or an operation applied to the wrong task kind."""


@dataclass(frozen=True)
class Task:
    kind: str  # REGRESSION or CLASSIFICATION
    num_classes: int = 0

    def __post_init__(self):
        if self.kind not in (REGRESSION, CLASSIFICATION):
            raise DataError(f"unknown task kind {self.kind!r}")
        if self.kind == CLASSIFICATION and self.num_classes < 2:
            raise DataError("classification requires num_classes >= 2")


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus targets.

    ``ids`` are stable per-instance identifiers (source row order); they
    survive splitting and subsetting so that scores can always be joined
    back to the original rows.
    """

    features: np.ndarray  # (n, d) float64
    targets: np.ndarray   # (n,) float64 for regression, int64 class index
    task: Task
    ids: np.ndarray = field(default=None)  # (n,) int64

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        if feats.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n = feats.shape[0]
        if self.task.kind == CLASSIFICATION:
            targ = np.asarray(self.targets, dtype=np.int64)
        else:
            targ = np.asarray(self.targets, dtype=np.float64)
        if targ.shape != (n,):
            raise DataError(f"targets length {targ.shape} != feature rows {n}")
        if self.task.kind == CLASSIFICATION:
            if targ.size and (targ.min() < 0 or targ.max() >= self.task.num_classes):
                raise DataError("class indices outside [0, num_classes)")
        ids = self.ids
        if ids is None:
            ids = np.arange(n, dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64)
            if ids.shape != (n,):
                raise DataError("ids length mismatch")
        for name, arr in (("features", feats), ("targets", targ), ("ids", ids)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "Dataset":
        """Row subset, preserving ids."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.targets[idx], self.task,
                       self.ids[idx])


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float
    split_seed: int

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise DataError("test_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class EvalSubsets:
    """The evaluated training subset and test instances.

    ``train_subset_indices`` are positions into the train split,
    ``test_indices`` positions into the test split.
    """

    train_subset_indices: np.ndarray
    test_indices: np.ndarray
    subset_seed: int

    def __post_init__(self):
        tr = np.asarray(self.train_subset_indices, dtype=np.int64)
        te = np.asarray(self.test_indices, dtype=np.int64)
        if len(np.unique(tr)) != len(tr) or len(tr) < 2:
            raise DataError("need at least 2 distinct train subset indices")
        if len(np.unique(te)) != len(te) or len(te) < 1:
            raise DataError("need at least 1 distinct test index")
        tr.setflags(write=False)
        te.setflags(write=False)
        object.__setattr__(self, "train_subset_indices", tr)
        object.__setattr__(self, "test_indices", te)

    @property
    def l(self) -> int:
        return len(self.train_subset_indices)

    @property
    def m(self) -> int:
        return len(self.test_indices)


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for load_csv.

    ``target`` names the target column; ``categorical`` columns are one-hot
    encoded (full encoding, no reference level dropped); every remaining
    column is numeric.
    """

    target: str
    task: str  # REGRESSION or CLASSIFICATION
    categorical: tuple = ()


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    scale: np.ndarray  # population std; 1.0 where the column had zero variance
    zero_variance: np.ndarray  # bool mask of constant columns


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read a headered CSV into a Dataset.

    Categorical columns are dummy-coded with one indicator per observed
    value (values sorted for determinism). Parse failures report the
    1-based file row.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells, "
                                f"expected {len(header)}")
            rows.append((lineno, row))

    if schema.target not in header:
        raise DataError(f"{path}: target column {schema.target!r} not found")
    for col in schema.categorical:
        if col not in header:
            raise DataError(f"{path}: categorical column {col!r} not found")

    col_idx = {name: i for i, name in enumerate(header)}
    feature_cols = [c for c in header if c != schema.target]
    cat_cols = set(schema.categorical)

    def parse_number(name, lineno, cell):
        try:
            return float(cell)
        except ValueError:
            raise DataError(f"{path}: row {lineno}, column {name!r}: "
                            f"non-numeric value {cell!r}") from None

    # First pass: collect categorical levels.
    levels = {c: sorted({row[col_idx[c]] for _, row in rows}) for c in cat_cols}

    columns = []
    names = []
    for name in feature_cols:
        j = col_idx[name]
        if name in cat_cols:
            lv = levels[name]
            onehot = np.zeros((len(rows), len(lv)))
            pos = {v: k for k, v in enumerate(lv)}
            for r, (_, row) in enumerate(rows):
                onehot[r, pos[row[j]]] = 1.0
            columns.append(onehot)
            names.extend(f"{name}={v}" for v in lv)
        else:
            col = np.array([parse_number(name, lineno, row[j])
                            for lineno, row in rows])
            columns.append(col[:, None])
            names.append(name)
    features = np.hstack(columns) if columns else np.zeros((len(rows), 0))

    tj = col_idx[schema.target]
    if schema.task == REGRESSION:
        targets = np.array([parse_number(schema.target, lineno, row[tj])
                            for lineno, row in rows])
        task = Task(REGRESSION)
    else:
        raw = [row[tj] for _, row in rows]
        classes = sorted(set(raw))
        lookup = {v: k for k, v in enumerate(classes)}
        targets = np.array([lookup[v] for v in raw], dtype=np.int64)
        task = Task(CLASSIFICATION, num_classes=len(classes))
    return Dataset(features, targets, task)


def standardize(ds: Dataset, stats_from) -> tuple[Dataset, StandardizationStats]:
    """Affine-map every feature column to zero mean / unit variance.

    Statistics come from the ``stats_from`` rows only (population variance,
    1/n denominator); the same map is applied to all rows. Zero-variance
    columns map to all-zeros.
    """
    idx = np.asarray(stats_from, dtype=np.int64)
    if idx.size == 0:
        raise DataError("stats_from must be non-empty")
    sub = ds.features[idx]
    mean = sub.mean(axis=0)
    std = sub.std(axis=0)  # population (ddof=0)
    zero = std <= 0.0
    scale = np.where(zero, 1.0, std)
    feats = (ds.features - mean) / scale
    feats[:, zero] = 0.0
    if not np.all(np.isfinite(feats)):
        raise DataError("non-finite values after standardization")
    stats = StandardizationStats(mean=mean, scale=scale, zero_variance=zero)
    return replace(ds, features=feats), stats


def destandardize(ds: Dataset, stats: StandardizationStats) -> Dataset:
    """Inverse of standardize. Constant columns recover their mean."""
    feats = ds.features * stats.scale + stats.mean
    feats[:, stats.zero_variance] = stats.mean[stats.zero_variance]
    return replace(ds, features=feats)


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled train/test split.

    Train size is ceil(n * (1 - test_fraction)); the remainder is test.
    """
    n = ds.n
    n_train = int(np.ceil(n * (1.0 - spec.test_fraction)))
    if n_train in (0, n):
        raise DataError("split leaves an empty side")
    perm = stream(TAG_SPLIT, spec.split_seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return ds.take(train_idx), ds.take(test_idx)


def select_subsets(train: Dataset, test: Dataset, l: int, m: int,
                   subset_seed: int) -> EvalSubsets:
    """Randomly choose the evaluated training subset and test instances."""
    if not 2 <= l <= train.n:
        raise DataError(f"l must lie in [2, {train.n}]")
    if not 1 <= m <= test.n:
        raise DataError(f"m must lie in [1, {test.n}]")
    rng = stream(TAG_SUBSET, subset_seed)
    tr = np.sort(rng.choice(train.n, size=l, replace=False))
    te = np.sort(rng.choice(test.n, size=m, replace=False))
    return EvalSubsets(tr, te, subset_seed)


@dataclass(frozen=True)
class SyntheticTruth:
    """Generating parameters of a synthetic dataset."""

    weights: np.ndarray = None      # (d,) for the linear kind
    class_means: np.ndarray = None  # (2, d) for the two-gaussians kind


LINEAR_REGRESSION = "linear-regression"
TWO_GAUSSIANS = "two-gaussians-classification"


def make_synthetic(kind: str, n: int, d: int, noise: float,
                   seed: int) -> tuple[Dataset, SyntheticTruth]:
    """Generate a synthetic dataset, deterministic in the seed.

    linear-regression: x ~ N(0, I), y = x . w* + noise * eps with w*
    drawn once from the seed stream. two-gaussians-classification: two
    equal blobs at recorded means with isotropic spread ``noise``.
    """
    if n < 4 or d < 1:
        raise DataError("need n >= 4 and d >= 1")
    rng = stream(TAG_SYNTH, seed)
    if kind == LINEAR_REGRESSION:
        w = rng.normal(size=d)
        x = rng.normal(size=(n, d))
        y = x @ w + noise * rng.normal(size=n)
        return (Dataset(x, y, Task(REGRESSION)), SyntheticTruth(weights=w))
    if kind == TWO_GAUSSIANS:
        mean0 = rng.normal(size=d)
        mean0 *= 10.0 / np.linalg.norm(mean0)
        means = np.stack([mean0, -mean0])
        labels = rng.integers(0, 2, size=n)
        x = means[labels] + noise * rng.normal(size=(n, d))
        return (Dataset(x, labels, Task(CLASSIFICATION, 2)),
                SyntheticTruth(class_means=means))
    raise DataError(f"unknown synthetic kind {kind!r}")


def flip_labels(ds: Dataset, fraction: float, seed: int,
                candidates=None) -> tuple[Dataset, np.ndarray]:
    """Flip round(fraction * k) binary labels chosen at random.

    ``candidates`` optionally restricts the flippable rows (positions into
    ds); by default all rows are candidates. Returns the corrupted dataset
    and a full-length boolean mask of flipped rows.
    """
    if ds.task.kind != CLASSIFICATION or ds.task.num_classes != 2:
        raise DataError("flip_labels requires a binary classification task")
    if not 0.0 <= fraction <= 1.0:
        raise DataError("fraction must lie in [0, 1]")
    cand = (np.arange(ds.n, dtype=np.int64) if candidates is None
            else np.asarray(candidates, dtype=np.int64))
    k = int(round(fraction * len(cand)))
    chosen = stream(TAG_FLIP, seed).choice(cand, size=k, replace=False)
    mask = np.zeros(ds.n, dtype=bool)
    mask[chosen] = True
    targets = np.where(mask, 1 - ds.targets, ds.targets)
    return replace(ds, targets=targets), mask


def write_dataset_csv(ds: Dataset, path) -> None:
    """Emit a dataset with stable column order (id, x0..x{d-1}, target)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"x{j}" for j in range(ds.d)] + ["target"])
        for i in range(ds.n):
            tgt = (int(ds.targets[i]) if ds.task.kind == CLASSIFICATION
                   else repr(float(ds.targets[i])))
            writer.writerow([int(ds.ids[i])]
                            + [repr(float(v)) for v in ds.features[i]]
                            + [tgt])

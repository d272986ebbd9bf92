"""Datasets, sparse text I/O, one-vs-all reduction, test-time deletion, folds."""
from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class Task(str, enum.Enum):
    BINARY = "binary"
    MULTICLASS = "multiclass"
    REGRESSION = "regression"


class DataError(ValueError):
    """Malformed input data."""


@dataclass(frozen=True)
class Dataset:
    X: sp.csr_matrix
    y: np.ndarray
    task: Task = Task.BINARY
    n_classes: int = 0

    def __post_init__(self):
        X = sp.csr_matrix(self.X, dtype=float)
        X.sort_indices()
        y = np.asarray(self.y, dtype=float).ravel()
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "task", Task(self.task))
        if X.shape[0] != y.shape[0]:
            raise DataError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all(np.isfinite(X.data)) or not np.all(np.isfinite(y)):
            raise DataError("features and labels must be finite")
        if self.task is Task.BINARY and not np.all(np.isin(y, (-1.0, 1.0))):
            raise DataError("binary labels must be +1 or -1")
        if self.task is Task.MULTICLASS:
            if not np.all((y == np.round(y)) & (y >= 0)):
                raise DataError("multiclass labels must be integers 0..C-1")
            n = int(y.max()) + 1 if y.size else 0
            object.__setattr__(self, "n_classes", max(self.n_classes, n))

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.X.shape[0]

    @property
    def examples(self):
        """(sparse row, label) pairs."""
        return [(self.X[i], self.y[i]) for i in range(len(self))]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.X[idx], self.y[idx], self.task, self.n_classes)

    def with_labels(self, y, task: Task) -> "Dataset":
        return Dataset(self.X, y, task)

    def with_features(self, X) -> "Dataset":
        return Dataset(X, self.y, self.task, self.n_classes)


def from_dense(X, y, task: Task | str = Task.BINARY) -> Dataset:
    X = sp.csr_matrix(X, dtype=float) if sp.issparse(X) else sp.csr_matrix(np.asarray(X, dtype=float))
    return Dataset(X, y, Task(task))


def infer_task(y: np.ndarray) -> Task:
    if y.size and np.all(np.isin(y, (-1.0, 1.0))):
        return Task.BINARY
    if y.size and np.all((y == np.round(y)) & (y >= 0)):
        return Task.MULTICLASS
    return Task.REGRESSION


# ---------------------------------------------------------------------------
# Sparse text format: "<label> <idx>:<value> ...", optional header
# "#dim D #base {0|1}".  Indices are 1-based unless the header says otherwise.


def _parse_header(line: str, lineno: int):
    tokens = line.replace("#", " # ").split()
    dim, base = None, 1
    i = 0
    while i < len(tokens):
        if tokens[i] == "#":
            i += 1
            continue
        key = tokens[i]
        if i + 1 >= len(tokens):
            raise DataError(f"line {lineno}: header key {key!r} has no value")
        val = tokens[i + 1]
        try:
            if key == "dim":
                dim = int(val)
            elif key == "base":
                base = int(val)
                if base not in (0, 1):
                    raise ValueError
            else:
                raise DataError(f"line {lineno}: unknown header key {key!r}")
        except ValueError:
            raise DataError(f"line {lineno}: bad header value {val!r} for {key!r}") from None
        i += 2
    return dim, base


def load_sparse(path, task: Task | str | None = None) -> Dataset:
    """Read the sparse text format (or a dense CSV when ``path`` ends in .csv)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_csv(path, task)
    rows, cols, vals, labels = [], [], [], []
    dim, base = None, 1
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if labels:
                    raise DataError(f"line {lineno}: header must precede the examples")
                dim, base = _parse_header(line, lineno)
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise DataError(f"line {lineno}: bad label {parts[0]!r}") from None
            if not math.isfinite(label):
                raise DataError(f"line {lineno}: non-finite label")
            n = len(labels)
            for tok in parts[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    if not sep:
                        raise ValueError
                    j, v = int(idx) - base, float(val)
                except ValueError:
                    raise DataError(f"line {lineno}: malformed feature {tok!r}") from None
                if j < 0:
                    raise DataError(f"line {lineno}: feature index {idx} below base {base}")
                if not math.isfinite(v):
                    raise DataError(f"line {lineno}: non-finite value in {tok!r}")
                rows.append(n)
                cols.append(j)
                vals.append(v)
            labels.append(label)
    seen = max(cols) + 1 if cols else 0
    if dim is None:
        dim = seen
    elif seen > dim:
        raise DataError(f"feature index {seen - 1 + base} exceeds declared dim {dim}")
    X = sp.csr_matrix((vals, (rows, cols)), shape=(len(labels), dim))
    X.sum_duplicates()
    y = np.asarray(labels, dtype=float)
    return Dataset(X, y, Task(task) if task else infer_task(y))


def save_sparse(data: Dataset, path, base: int = 1) -> None:
    """Write the sparse text format with a header; values use repr (exact)."""
    X = data.X
    with open(path, "w") as fh:
        fh.write(f"#dim {data.dim} #base {base}\n")
        for i in range(X.shape[0]):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            feats = " ".join(f"{j + base}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
            label = data.y[i]
            label = repr(int(label)) if data.task is not Task.REGRESSION and label == int(label) else repr(float(label))
            fh.write(f"{label} {feats}".rstrip() + "\n")


def load_csv(path, task: Task | str | None = None) -> Dataset:
    """Dense CSV whose last column is the label/response."""
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if arr.size == 0:
        return Dataset(sp.csr_matrix((0, 0)), np.zeros(0), Task(task) if task else Task.BINARY)
    y = arr[:, -1]
    return Dataset(sp.csr_matrix(arr[:, :-1]), y, Task(task) if task else infer_task(y))


# ---------------------------------------------------------------------------
# One-vs-all.


@dataclass(frozen=True)
class OneVsAllModel:
    models: tuple
    classes: tuple

    def scores(self, X) -> np.ndarray:
        from .latent import LatentModel, predict_latent

        cols = []
        for m in self.models:
            cols.append(predict_latent(m, X) if isinstance(m, LatentModel) else m.decision_function(X))
        return np.column_stack(cols)


def one_vs_all_train(data: Dataset, engine: Callable, cfg, **engine_kwargs) -> OneVsAllModel:
    """Train one binary model per class (+1 for the class, -1 otherwise)."""
    C = data.n_classes
    if C < 2:
        raise DataError("one-vs-all needs at least two classes")
    models = []
    for k in range(C):
        y = np.where(data.y == k, 1.0, -1.0)
        if not np.any(y > 0):
            warnings.warn(f"class {k} has no examples; training on all-negative labels", stacklevel=2)
        models.append(engine(data.with_labels(y, Task.BINARY), cfg, **engine_kwargs))
    return OneVsAllModel(tuple(models), tuple(range(C)))


def one_vs_all_predict(model: OneVsAllModel, x) -> int | np.ndarray:
    """Argmax of the per-class scores; ties go to the lowest class id."""
    single = not sp.issparse(x) and np.ndim(x) == 1
    pred = np.argmax(model.scores(sp.csr_matrix(np.atleast_2d(x)) if single else x), axis=1)
    return int(pred[0]) if single else pred


# ---------------------------------------------------------------------------
# Robustness and evaluation utilities.


def delete_features(data: Dataset, fraction: float, seed) -> Dataset:
    """Zero each stored feature value with probability ``fraction``.

    Survivors are not rescaled: this is test-time deletion, not the unbiased
    training-time dropout of :mod:`dropirls.noise`.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    X = data.X.copy()
    killed = rng.random(X.nnz) < fraction
    X.data[killed] = 0.0
    X.eliminate_zeros()
    return data.with_features(X)


def kfold(data: Dataset, k: int, seed) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train, validation) index pairs; stratified for classification."""
    from sklearn.model_selection import KFold, StratifiedKFold

    n = len(data)
    if k < 2 or n < k:
        raise ValueError(f"need k >= 2 and at least k examples (k={k}, N={n})")
    seed = int(np.random.SeedSequence(seed).generate_state(1)[0])
    idx = np.arange(n)
    if data.task is not Task.REGRESSION:
        _, counts = np.unique(data.y, return_counts=True)
        if counts.min() >= k:
            splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
            return [(tr, va) for tr, va in splitter.split(idx, data.y)]
        warnings.warn(f"a class has fewer than k={k} members; using unstratified folds", stacklevel=2)
    splitter = KFold(n_splits=k, shuffle=True, random_state=seed)
    return [(tr, va) for tr, va in splitter.split(idx)]


@dataclass
class MetricReport:
    task: Task
    value: float | None
    name: str
    status: str = "ok"
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return {"metric": self.name, "value": self.value, "status": self.status, **self.extra}


def metrics(predictions, truths, task: Task | str) -> MetricReport:
    """Error rate for classification, predictive R^2 for regression."""
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(truths, dtype=float).ravel()
    task = Task(task)
    if p.shape != t.shape or p.size < 1:
        raise ValueError("predictions and truths need equal, nonzero length")
    if task is Task.REGRESSION:
        ss_tot = np.sum((t - t.mean()) ** 2)
        if ss_tot == 0:
            return MetricReport(task, None, "r2", status="undefined: zero variance in truths")
        return MetricReport(task, float(1.0 - np.sum((t - p) ** 2) / ss_tot), "r2")
    return MetricReport(task, float(np.mean(p != t)), "error_rate")

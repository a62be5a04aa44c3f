"""Weighted point clouds standing in for ex-ante and ex-post distributions."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from perfcost.errors import (
    EmptyDataError,
    LinearAlgebraError,
    MapEvaluationError,
    SchemaError,
    ShapeError,
)
from perfcost.rng import make_rng, standard_normal

WEIGHT_TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Finite weighted point cloud.

    ``points`` is an ``(n, d)`` array and ``weights`` a length-``n`` probability
    vector. Passing ``weights=None`` gives uniform mass ``1/n``. Both arrays are
    made read-only so a measure can be shared freely.
    """

    points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ShapeError(f"points must be a non-empty (n, d) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ShapeError("points must be finite")
        n = pts.shape[0]
        if self.weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape[0] != n:
                raise ShapeError(f"{w.shape[0]} weights for {n} points")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ShapeError("weights must be finite and nonnegative")
            if abs(w.sum() - 1.0) > WEIGHT_TOL:
                raise ShapeError(f"weights sum to {w.sum():.17g}, not 1")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, EmpiricalMeasure):
            return NotImplemented
        return (
            self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None

    def subsample(self, size, seed):
        """Uniform subsample without replacement, order of survivors preserved."""
        if size >= self.n:
            return self
        idx = np.sort(make_rng(seed).choice(self.n, size=size, replace=False))
        return EmpiricalMeasure(self.points[idx])


@dataclass(frozen=True)
class DatasetSchema:
    feature_columns: Sequence[str]
    label_column: Optional[str] = None
    intercept: bool = False

    def __post_init__(self):
        cols = list(self.feature_columns)
        if not cols:
            raise SchemaError("schema needs at least one feature column")
        if len(set(cols)) != len(cols):
            raise SchemaError(f"duplicate feature columns in {cols}")
        if self.label_column is not None and self.label_column in cols:
            raise SchemaError(f"label column {self.label_column!r} is also a feature")
        object.__setattr__(self, "feature_columns", tuple(cols))

    def to_dict(self):
        return {
            "feature_columns": list(self.feature_columns),
            "label_column": self.label_column,
            "intercept": self.intercept,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["feature_columns"], d.get("label_column"), bool(d.get("intercept", False)))


@dataclass(frozen=True)
class CsvData:
    measure: EmpiricalMeasure
    labels: Optional[np.ndarray] = None
    n_dropped: int = 0
    columns: tuple = field(default=())


def from_csv(path, schema):
    """Load feature rows (and optional labels) from a headed CSV file.

    Rows where any referenced field is missing or non-finite are dropped and
    counted. Raises ``SchemaError`` for absent or non-numeric columns and
    ``EmptyDataError`` when nothing survives.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataError(f"{path} has no header row") from None
        wanted = list(schema.feature_columns)
        if schema.label_column is not None:
            wanted.append(schema.label_column)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        idx = [header.index(c) for c in wanted]
        rows, dropped = [], 0
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not s.strip() for s in rec):
                continue
            vals = []
            for j in idx:
                s = rec[j].strip() if j < len(rec) else ""
                if s == "" or s.lower() in ("na", "nan"):
                    vals.append(math.nan)
                    continue
                try:
                    vals.append(float(s))
                except ValueError:
                    raise SchemaError(f"{path}:{lineno}: non-numeric value {s!r} in column {header[j]!r}") from None
            if all(math.isfinite(v) for v in vals):
                rows.append(vals)
            else:
                dropped += 1
    if not rows:
        raise EmptyDataError(f"{path}: no rows left after dropping {dropped} with missing values")
    arr = np.array(rows, dtype=float)
    nf = len(schema.feature_columns)
    X = arr[:, :nf]
    cols = tuple(schema.feature_columns)
    if schema.intercept:
        X = np.hstack([X, np.ones((X.shape[0], 1))])
        cols = cols + ("intercept",)
    labels = arr[:, nf].copy() if schema.label_column is not None else None
    return CsvData(EmpiricalMeasure(X), labels, dropped, cols)


def to_csv(path, measure, columns=None, labels=None, label_column="y"):
    """Write points (and labels) with 17 significant digits so re-reading is exact."""
    columns = list(columns) if columns is not None else [f"x{j}" for j in range(measure.dim)]
    if len(columns) != measure.dim:
        raise ShapeError(f"{len(columns)} column names for dimension {measure.dim}")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns + ([label_column] if labels is not None else []))
        for i, row in enumerate(measure.points):
            out = [format(v, ".17g") for v in row]
            if labels is not None:
                out.append(format(float(labels[i]), ".17g"))
            w.writerow(out)


def psd_factor(cov, tol=1e-8):
    """Lower-triangular ``L`` with ``L @ L.T == cov`` for a PSD ``cov``.

    Cholesky where pivots in ``[-tol, tol]`` are clipped to zero, so
    singular (even all-zero) covariances factor cleanly.
    """
    A = np.atleast_2d(np.asarray(cov, dtype=float))
    d = A.shape[0]
    if A.shape != (d, d):
        raise ShapeError(f"covariance must be square, got {A.shape}")
    if not np.allclose(A, A.T, atol=tol, rtol=0):
        raise LinearAlgebraError("covariance is not symmetric")
    scale = max(1.0, float(np.max(np.abs(A))))
    L = np.zeros_like(A)
    for j in range(d):
        piv = A[j, j] - L[j, :j] @ L[j, :j]
        if piv < -tol * scale:
            raise LinearAlgebraError(f"covariance is not PSD (pivot {piv:.3g} at {j})")
        if piv <= tol * scale:
            off = A[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]
            if np.any(np.abs(off) > np.sqrt(tol) * scale):
                raise LinearAlgebraError(f"covariance is not PSD (zero pivot with coupling at {j})")
            continue
        L[j, j] = math.sqrt(piv)
        L[j + 1 :, j] = (A[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def sample_gaussian(mean, cov, n, seed):
    """``n`` draws from ``N(mean, cov)`` as a uniform empirical measure."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (mean.size, mean.size):
        raise ShapeError(f"mean has length {mean.size} but cov has shape {cov.shape}")
    if n < 1:
        raise ShapeError("n must be at least 1")
    L = psd_factor(cov)
    z = standard_normal(make_rng(seed), (n, mean.size))
    return EmpiricalMeasure(mean + z @ L.T)


def pushforward(m, f: Callable, batched=False):
    """Image of ``m`` under the point map ``f``; weights are carried over untouched.

    ``f`` maps one d-vector to one d-vector, or, with ``batched=True``, the
    whole ``(n, d)`` array at once.
    """
    pts = m.points
    if batched:
        out = np.asarray(f(pts), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
    else:
        out = np.array([np.asarray(f(p), dtype=float).reshape(-1) for p in pts])
    if out.ndim != 2 or out.shape[0] != pts.shape[0]:
        raise ShapeError(f"map returned shape {out.shape} for {pts.shape[0]} points")
    bad = np.flatnonzero(~np.all(np.isfinite(out), axis=1))
    if bad.size:
        raise MapEvaluationError(int(bad[0]))
    return EmpiricalMeasure(out, m.weights)


def mean(m):
    return m.weights @ m.points

"""Discrete optimal transport under squared Euclidean ground cost.

Exact plans come from an assignment solver when both sides are uniform with
the same number of atoms and from the transportation LP otherwise. The
free-support barycenter alternates exact couplings with barycentric
projection of the support.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from perfcost.errors import OptimizationError, ShapeError, SizeError
from perfcost.measures import EmpiricalMeasure
from perfcost.rng import make_rng

DEFAULT_CAP = 500 * 500
MARGINAL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Coupling:
    """Transport plan between ``source`` (rows) and ``target`` (columns)."""

    plan: np.ndarray
    source: EmpiricalMeasure
    target: EmpiricalMeasure
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        plan = np.asarray(self.plan, dtype=float)
        if plan.shape != (self.source.n, self.target.n):
            raise ShapeError(f"plan shape {plan.shape} does not match measures ({self.source.n}, {self.target.n})")
        plan.setflags(write=False)
        object.__setattr__(self, "plan", plan)

    def marginal_error(self):
        """Largest absolute deviation of row/column sums from the marginals."""
        return max(
            float(np.max(np.abs(self.plan.sum(axis=1) - self.source.weights))),
            float(np.max(np.abs(self.plan.sum(axis=0) - self.target.weights))),
        )

    def barycentric_projection(self):
        """Map each source atom to the plan-weighted mean of its images."""
        mass = self.plan.sum(axis=1)
        out = self.plan @ self.target.points
        nz = mass > 0
        out[nz] /= mass[nz, None]
        out[~nz] = self.source.points[~nz]
        return out


@dataclass
class BarycenterResult:
    barycenter: EmpiricalMeasure
    couplings: List[Coupling]
    objective_trace: List[float]
    converged: bool = False


def cost_matrix(x, y):
    return cdist(np.asarray(x, dtype=float), np.asarray(y, dtype=float), "sqeuclidean")


def _check_dims(a, b):
    if a.dim != b.dim:
        raise ShapeError(f"dimension mismatch: {a.dim} vs {b.dim}")


def w2_1d(a, b):
    """Squared 2-Wasserstein distance between two 1-D measures.

    Returns ``(cost, pairing)``. ``pairing[i]`` is the index in ``b`` matched to
    atom ``i`` of ``a`` (i-th order statistic to i-th order statistic); it is
    ``None`` unless both measures are uniform with the same size. General
    weights are handled through the quantile (north-west corner) coupling.
    """
    if a.dim != 1 or b.dim != 1:
        raise ShapeError(f"w2_1d needs 1-D measures, got dims {a.dim} and {b.dim}")
    xa, xb = a.points[:, 0], b.points[:, 0]
    ia = np.argsort(xa, kind="stable")
    ib = np.argsort(xb, kind="stable")
    if a.n == b.n and a.is_uniform and b.is_uniform:
        diff = xa[ia] - xb[ib]
        pairing = np.empty(a.n, dtype=int)
        pairing[ia] = ib
        return float(np.mean(diff * diff)), pairing
    rows, cols, mass = _northwest(a.weights[ia], b.weights[ib])
    diff = xa[ia][rows] - xb[ib][cols]
    return float(mass @ (diff * diff)), None


def _northwest(wa, wb):
    """Monotone coupling of two sorted weight vectors (quantile coupling)."""
    i = j = 0
    ra, rb = wa[0], wb[0]
    rows, cols, mass = [], [], []
    while i < len(wa) and j < len(wb):
        m = min(ra, rb)
        if m > 0:
            rows.append(i)
            cols.append(j)
            mass.append(m)
        ra -= m
        rb -= m
        if ra <= 1e-15 and i < len(wa):
            i += 1
            if i < len(wa):
                ra = wa[i]
        if rb <= 1e-15 and j < len(wb):
            j += 1
            if j < len(wb):
                rb = wb[j]
    return np.array(rows, dtype=int), np.array(cols, dtype=int), np.array(mass)


def exact_coupling(a, b, cap=DEFAULT_CAP):
    """Optimal plan for the Kantorovich problem with ``|x - y|^2`` cost.

    Uniform equal-size inputs are solved as an assignment problem; anything
    else goes through the transportation LP. Zero-mass atoms are dropped
    before solving and receive empty rows/columns in the returned plan.
    """
    _check_dims(a, b)
    if a.n * b.n > cap:
        raise SizeError(
            f"{a.n}x{b.n} exceeds the exact-solver cap of {cap} entries; use sinkhorn_coupling instead"
        )
    plan = np.zeros((a.n, b.n))
    if a.n == b.n and a.is_uniform and b.is_uniform:
        C = cost_matrix(a.points, b.points)
        rows, cols = linear_sum_assignment(C)
        plan[rows, cols] = 1.0 / a.n
        return Coupling(plan, a, b, {"solver": "assignment"})
    ka = np.flatnonzero(a.weights > 0)
    kb = np.flatnonzero(b.weights > 0)
    sub = _transport_lp(a.weights[ka], b.weights[kb], cost_matrix(a.points[ka], b.points[kb]))
    plan[np.ix_(ka, kb)] = sub
    return Coupling(plan, a, b, {"solver": "lp"})


def _transport_lp(wa, wb, C):
    n, m = C.shape
    if n == 1 or m == 1:
        return np.outer(wa, wb)
    # Row-sum constraints for all rows, column-sum constraints for m-1 columns
    # (the last is implied and dropping it keeps the system full rank).
    r_idx = np.repeat(np.arange(n), m)
    c_idx = np.tile(np.arange(m), n)
    var = np.arange(n * m)
    keep = c_idx < m - 1
    A = coo_matrix(
        (
            np.ones(n * m + keep.sum()),
            (np.concatenate([r_idx, n + c_idx[keep]]), np.concatenate([var, var[keep]])),
        ),
        shape=(n + m - 1, n * m),
    ).tocsr()
    rhs = np.concatenate([wa, wb[:-1]])
    res = linprog(C.ravel(), A_eq=A, b_eq=rhs, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise OptimizationError(f"transport LP failed: {res.message}")
    plan = np.maximum(res.x.reshape(n, m), 0.0)
    # Polish: rescale rows so the marginals hold to rounding error.
    rs = plan.sum(axis=1)
    nz = rs > 0
    plan[nz] *= (wa[nz] / rs[nz])[:, None]
    return plan


def sinkhorn_coupling(a, b, eps=1e-2, max_iter=10_000, tol=1e-9):
    """Entropic plan via log-domain Sinkhorn.

    ``eps`` is relative: the cost matrix is divided by its maximum before
    regularizing. Non-convergence is reported through ``meta["converged"]``.
    """
    _check_dims(a, b)
    if eps <= 0:
        raise ValueError("eps must be positive")
    C = cost_matrix(a.points, b.points)
    scale = C.max() if C.max() > 0 else 1.0
    K = -C / (scale * eps)
    with np.errstate(divide="ignore"):
        la, lb = np.log(a.weights), np.log(b.weights)
    f = np.zeros(a.n)
    g = np.zeros(b.n)
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        f = la - logsumexp(K + g[None, :], axis=1)
        g = lb - logsumexp(K + f[:, None], axis=0)
        if it % 10 == 0 or it == max_iter:
            P = np.exp(K + f[:, None] + g[None, :])
            err = float(np.abs(P.sum(axis=1) - a.weights).sum())
            if err <= tol:
                break
    P = np.exp(K + f[:, None] + g[None, :])
    err = float(np.abs(P.sum(axis=1) - a.weights).sum())
    meta = {"solver": "sinkhorn", "converged": err <= tol, "iterations": it, "marginal_error": err}
    return Coupling(P, a, b, meta)


def w2_cost(c):
    """Transport cost ``sum_ij plan_ij |a_i - b_j|^2`` of a coupling."""
    rows, cols = np.nonzero(c.plan)
    diff = c.source.points[rows] - c.target.points[cols]
    return float(c.plan[rows, cols] @ np.einsum("ij,ij->i", diff, diff))


def free_support_barycenter(
    measures: Sequence[EmpiricalMeasure],
    support_size: Optional[int] = None,
    init=None,
    max_iter=100,
    tol=1e-10,
    cap=DEFAULT_CAP,
):
    """Fixed-support-size Wasserstein barycenter with uniform atom weights.

    Minimizes ``sum_k W2^2(mu, measures[k])``. Each sweep couples the current
    support to every input exactly, then moves each atom to the average of its
    barycentric images. ``init`` is an ``EmpiricalMeasure`` whose points seed the
    support, an integer seed (atoms drawn from the pooled inputs), or ``None``
    for the first input's points. The loop stops when the objective improves
    by less than ``tol`` (relative to ``max(1, objective)``).
    """
    measures = list(measures)
    if not measures:
        raise ValueError("free_support_barycenter needs at least one measure")
    d = measures[0].dim
    for m in measures:
        if m.dim != d:
            raise ShapeError("all measures must share a dimension")
    s = support_size or measures[0].n
    if isinstance(init, EmpiricalMeasure):
        X = np.array(init.points, dtype=float)
        if X.shape[0] != s:
            raise ShapeError(f"init has {X.shape[0]} atoms, support_size is {s}")
    else:
        if init is None and measures[0].n == s:
            X = np.array(measures[0].points)
        else:
            pool = np.vstack([m.points for m in measures])
            rng = make_rng(0 if init is None else init)
            X = pool[rng.choice(pool.shape[0], size=s, replace=pool.shape[0] < s)].copy()

    trace = []
    converged = False
    couplings = []
    for it in range(max_iter):
        mu = EmpiricalMeasure(X)
        couplings = [exact_coupling(mu, m, cap=cap) for m in measures]
        obj = float(sum(w2_cost(c) for c in couplings))
        trace.append(obj)
        if len(trace) > 1 and trace[-2] - obj < tol * max(1.0, trace[-2]):
            converged = True
            break
        if obj == 0.0 or it == max_iter - 1:
            converged = obj == 0.0
            break
        X = np.mean([c.barycentric_projection() for c in couplings], axis=0)
    return BarycenterResult(EmpiricalMeasure(X), couplings, trace, converged)

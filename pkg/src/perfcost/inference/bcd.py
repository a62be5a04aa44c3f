"""Block-coordinate descent for the Bregman potential.

The objective aligns the pushforwards ``(grad phi)_# P`` (when an ex-ante
sample is given) and ``(grad phi - grad B_k)_# Q_k`` around a common
free-support barycenter ``mu``::

    L(phi) = W2^2(mu, (grad phi)_# P) + sum_k W2^2(mu, (grad phi - grad B_k)_# Q_k)

Each outer iteration runs a warm-started barycenter step (which also refreshes
the couplings) and then a potential step with the couplings held fixed. The
potential step also moves the barycenter atoms to their optimal positions
for the new potential (plan-weighted means of the matched points). Both
steps are coordinate minimizations, so the recorded objective never
increases.
"""

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from perfcost.errors import ShapeError
from perfcost.inference.convex_net import grad_vjp, init_net
from perfcost.measures import EmpiricalMeasure
from perfcost.ot import DEFAULT_CAP, free_support_barycenter
from perfcost.potentials import ConvexNetPotential, QuadraticPotential, potential_from_dict
from perfcost.rng import make_rng, standard_normal

FAMILIES = ("quadratic", "convex_net")


@dataclass(frozen=True)
class BcdConfig:
    max_outer_iters: int = 50
    tol: float = 1e-6
    # barycenter step
    bary_max_iter: int = 10
    bary_tol: float = 1e-9
    support_size: Optional[int] = None
    # potential step (only the convex net uses the gradient settings)
    inner_iters: int = 50
    lr: float = 1e-2
    inner_tol: float = 1e-10
    hidden: int = 5
    seed: int = 0
    ot_cap: int = DEFAULT_CAP

    def __post_init__(self):
        for name in ("tol", "bary_tol", "lr", "inner_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer_iters < 1 or self.bary_max_iter < 1 or self.inner_iters < 1:
            raise ValueError("iteration limits must be at least 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class FitReport:
    potential: object
    objective_trace: List[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def to_dict(self):
        return {
            "potential": self.potential.to_dict(),
            "objective_trace": list(map(float, self.objective_trace)),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d):
        return cls(potential_from_dict(d["potential"]), list(d["objective_trace"]), d["converged"], d["iterations"])

    def trace_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective"])
            for i, v in enumerate(self.objective_trace):
                w.writerow([i, repr(float(v))])


def _random_quadratic(dim, seed):
    rng = make_rng(seed)
    A = standard_normal(rng, (dim, dim))
    scale = np.exp(0.5 * standard_normal(rng, 1)[0])
    return QuadraticPotential.from_matrix(scale * (np.eye(dim) + 0.1 * A @ A.T))


def _sources(ex_ante, ex_posts, benefits):
    """(points, shift) per measure: the pushforward is ``grad phi(points) - shift``."""
    out = []
    if ex_ante is not None:
        out.append((ex_ante.points, np.zeros_like(ex_ante.points)))
    for q, b in zip(ex_posts, benefits):
        out.append((q.points, b.grad(q.points).reshape(q.n, -1)))
    return out


def _pushforwards(p, sources):
    return [EmpiricalMeasure(np.asarray(p.grad(Z)).reshape(Z.shape) - B) for Z, B in sources]


def _pairs(coupling):
    # rows index barycenter atoms, columns the pushforward's points
    i, j = np.nonzero(coupling.plan)
    return i, j, coupling.plan[i, j]


def _stats(sources, pairs, n_atoms):
    """Per-atom plan mass and the plan-weighted means of points and shifts."""
    d = sources[0][0].shape[1]
    mass = np.zeros(n_atoms)
    zbar = np.zeros((n_atoms, d))
    bbar = np.zeros((n_atoms, d))
    for (Z, B), (i, j, w) in zip(sources, pairs):
        np.add.at(mass, i, w)
        np.add.at(zbar, i, w[:, None] * Z[j])
        np.add.at(bbar, i, w[:, None] * B[j])
    nz = mass > 0
    zbar[nz] /= mass[nz, None]
    bbar[nz] /= mass[nz, None]
    return mass, zbar, bbar


def _optimal_atoms(p, sources, pairs, n_atoms, X_old):
    """Atoms minimizing the fixed-coupling objective for potential ``p``."""
    mass = np.zeros(n_atoms)
    X = np.zeros_like(X_old)
    for (Z, B), (i, j, w) in zip(sources, pairs):
        Y = np.asarray(p.grad(Z[j])).reshape(len(j), -1) - B[j]
        np.add.at(mass, i, w)
        np.add.at(X, i, w[:, None] * Y)
    nz = mass > 0
    X[nz] /= mass[nz, None]
    X[~nz] = X_old[~nz]
    return X


def _surrogate(p, X, sources, pairs):
    """Fixed-coupling objective ``sum w |grad phi(z_j) - b_j - x_i|^2``."""
    tot = 0.0
    for (Z, B), (i, j, w) in zip(sources, pairs):
        R = np.asarray(p.grad(Z[j])).reshape(len(j), -1) - B[j] - X[i]
        tot += float(w @ np.einsum("ij,ij->i", R, R))
    return tot


def _duplication(d):
    """Matrix ``S`` with ``vec(M) = S m`` for symmetric ``M`` (column-major vec)."""
    pairs = [(r, c) for c in range(d) for r in range(c, d)]
    S = np.zeros((d * d, len(pairs)))
    for k, (r, c) in enumerate(pairs):
        S[c * d + r, k] = 1.0
        S[r * d + c, k] = 1.0
    return S, pairs


def _quadratic_step(p, X, sources, pairs):
    """Minimize the fixed-coupling objective jointly over ``M`` and the atoms.

    For fixed ``M`` the best atom is ``M zbar_i - bbar_i`` (plan-weighted
    means), so the residuals ``M (z_j - zbar_i) - (b_j - bbar_i)`` are linear
    in ``M`` and the problem is least squares over symmetric matrices.
    """
    d = p.dim
    _, zbar, bbar = _stats(sources, pairs, X.shape[0])
    Cyy = np.zeros((d, d))
    Cty = np.zeros((d, d))
    for (Z, B), (i, j, w) in zip(sources, pairs):
        U = Z[j] - zbar[i]
        V = B[j] - bbar[i]
        Cyy += (U * w[:, None]).T @ U
        Cty += (V * w[:, None]).T @ U
    S, idx = _duplication(d)
    lhs = S.T @ np.kron(Cyy, np.eye(d)) @ S
    rhs = S.T @ Cty.reshape(-1, order="F")
    m = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    M_ls = np.zeros((d, d))
    for k, (r, c) in enumerate(idx):
        M_ls[r, c] = M_ls[c, r] = m[k]
    # The objective is jointly convex, so every point between the current M
    # and the unconstrained minimizer is no worse than the current M. Back
    # off toward the current M until the candidate is positive definite.
    cur = _surrogate(p, X, sources, pairs)
    t = 1.0
    for _ in range(60):
        cand = (1 - t) * p.M + t * M_ls
        cand = 0.5 * (cand + cand.T)
        if np.linalg.eigvalsh(cand)[0] > 1e-10:
            new = QuadraticPotential(np.linalg.cholesky(cand))
            X_new = _optimal_atoms(new, sources, pairs, X.shape[0], X)
            if _surrogate(new, X_new, sources, pairs) <= cur:
                return new, X_new
        t *= 0.5
    return p, X


def _net_step(p, X, sources, pairs, cfg):
    """Projected gradient on the network with atoms re-centered every step."""
    n_atoms = X.shape[0]
    X = _optimal_atoms(p, sources, pairs, n_atoms, X)
    cur = _surrogate(p, X, sources, pairs)
    lr = cfg.lr
    for _ in range(cfg.inner_iters):
        go = np.zeros_like(p.omega)
        gk = np.zeros_like(p.kappa)
        gd = np.zeros_like(p.delta)
        for (Z, B), (i, j, w) in zip(sources, pairs):
            R = p.grad(Z[j]) - B[j] - X[i]
            a, b, c = grad_vjp(p, Z[j], R, w)
            go += 2 * a
            gk += 2 * b
            gd += 2 * c
        # backtrack so the objective never goes up
        while lr > 1e-12:
            cand = ConvexNetPotential(p.omega - lr * go, p.kappa - lr * gk, np.maximum(p.delta - lr * gd, 0.0))
            X_c = _optimal_atoms(cand, sources, pairs, n_atoms, X)
            val = _surrogate(cand, X_c, sources, pairs)
            if val <= cur:
                break
            lr *= 0.5
        else:
            break
        improvement = cur - val
        p, X, cur = cand, X_c, val
        if improvement < cfg.inner_tol * max(1.0, cur):
            break
        lr = min(2 * lr, cfg.lr)
    return p, X


def fit_bcd(ex_ante, ex_posts, benefits, family="quadratic", cfg: BcdConfig = BcdConfig(), init=None):
    """Estimate ``phi`` by alternating barycenter and potential steps.

    Args:
        ex_ante: ex-ante sample, or ``None`` for the ex-post-only objective.
        ex_posts: ex-post samples, one per deployment.
        benefits: benefit of each deployment, aligned with ``ex_posts``.
        family: ``"quadratic"`` or ``"convex_net"``.
        cfg: solver settings.
        init: optional starting potential; drawn from ``cfg.seed`` otherwise.

    Returns:
        FitReport with the objective after every barycenter step.
    """
    ex_posts = list(ex_posts)
    benefits = list(benefits)
    if family == "isotonic":
        raise ValueError("isotonic potentials are fit with fit_isotonic_phi_prime_1d")
    if family not in FAMILIES:
        raise ValueError(f"unknown potential family {family!r}")
    if not ex_posts:
        raise ValueError("fit_bcd needs at least one ex-post sample")
    if len(ex_posts) != len(benefits):
        raise ValueError(f"{len(ex_posts)} ex-post samples but {len(benefits)} benefits")
    if ex_ante is None and len(ex_posts) < 2:
        raise ValueError("the ex-post-only objective needs at least two deployments")
    d = ex_posts[0].dim
    for m in ([ex_ante] if ex_ante is not None else []) + ex_posts:
        if m.dim != d:
            raise ShapeError("all samples must share a dimension")
    for b in benefits:
        if b.dim != d:
            raise ShapeError(f"benefit dimension {b.dim} != data dimension {d}")

    if init is not None:
        p = init
    elif family == "quadratic":
        p = _random_quadratic(d, cfg.seed)
    else:
        p = init_net(d, cfg.hidden, cfg.seed)
    if p.dim != d:
        raise ShapeError("initial potential has the wrong dimension")

    sources = _sources(ex_ante, ex_posts, benefits)
    support = cfg.support_size or sources[0][0].shape[0]
    mu = cfg.seed
    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_outer_iters + 1):
        bary = free_support_barycenter(
            _pushforwards(p, sources),
            support_size=support,
            init=mu,
            max_iter=cfg.bary_max_iter,
            tol=cfg.bary_tol,
            cap=cfg.ot_cap,
        )
        mu = bary.barycenter
        obj = bary.objective_trace[-1]
        trace.append(obj)
        if len(trace) > 1 and abs(trace[-2] - obj) < cfg.tol * max(1.0, trace[-2]):
            converged = True
            break
        if obj == 0.0:
            converged = True
            break
        X = mu.points
        pairs = [_pairs(c) for c in bary.couplings]
        if family == "quadratic":
            p, X = _quadratic_step(p, X, sources, pairs)
        else:
            p, X = _net_step(p, X, sources, pairs, cfg)
        mu = EmpiricalMeasure(X)
    return FitReport(p, trace, converged, it)


def bcd_objective(p, ex_ante, ex_posts, benefits, support_size=None, seed=0, max_iter=100, cap=DEFAULT_CAP):
    """Objective of ``p``, with the barycenter solved from scratch."""
    sources = _sources(ex_ante, list(ex_posts), list(benefits))
    res = free_support_barycenter(
        _pushforwards(p, sources), support_size=support_size, init=None, max_iter=max_iter, cap=cap
    )
    return res.objective_trace[-1]

"""One-dimensional nonparametric estimate of ``phi'``.

Pair the samples monotonically (the 1-D optimal transport map), then fit a
non-decreasing piecewise-linear ``g`` on the union of sample points so that
``g(z'_i) - g(z_i) ~= B'(z'_i)`` in least squares.
"""

import numpy as np

from perfcost.errors import DomainError, InsufficientDataError
from perfcost.measures import EmpiricalMeasure
from perfcost.ot import w2_1d
from perfcost.potentials import IsotonicDerivative1D

MIN_SAMPLES = 5


class _IncrementOperator:
    """``A inc = G[b] - G[a]`` with ``G = cumsum([0, inc])`` and its adjoint."""

    def __init__(self, a, b, n_knots):
        self.a = a
        self.b = b
        self.k = n_knots

    def __call__(self, inc):
        G = np.concatenate([[0.0], np.cumsum(inc)])
        return G[self.b] - G[self.a]

    def adjoint(self, r):
        H = np.bincount(self.b, weights=r, minlength=self.k) - np.bincount(self.a, weights=r, minlength=self.k)
        # inc_l feeds every G[m] with m >= l
        return np.cumsum(H[::-1])[::-1][1:]

    def norm_sq(self, iters=100, seed=0):
        v = np.random.default_rng(seed).random(self.k - 1) + 0.5
        lam = 0.0
        for _ in range(iters):
            w = self.adjoint(self(v))
            lam = float(np.linalg.norm(w))
            if lam == 0.0:
                return 0.0
            v = w / lam
        return lam


def _equalize(ex_ante, ex_post, seed):
    m = min(ex_ante.n, ex_post.n)
    return ex_ante.subsample(m, seed), ex_post.subsample(m, seed + 1)


def _monotone_pairs(ex_ante, ex_post):
    _, pairing = w2_1d(ex_ante, ex_post)
    if pairing is None:
        raise DomainError("monotone pairing needs uniform samples of equal size")
    return ex_ante.points[:, 0], ex_post.points[pairing, 0]


def _benefit_derivative(benefit, zp):
    if benefit.dim != 1:
        raise DomainError(f"isotonic estimation needs a 1-D benefit, got dimension {benefit.dim}")
    return np.asarray(benefit.grad(zp[:, None]), dtype=float).reshape(-1)


def solve_increments(A, target, tol=1e-8, max_iter=50_000):
    """FISTA for ``min_{inc >= 0} |A inc - target|^2`` started at zero.

    Starting from zero keeps directions the data cannot see at zero, which
    is what makes the fit well defined when the pairs leave gaps.
    """
    L = 2.0 * A.norm_sq()
    x = np.zeros(A.k - 1)
    if L == 0.0 or x.size == 0:
        return x
    y = x.copy()
    t = 1.0
    scale = max(1.0, float(np.linalg.norm(target)))
    for _ in range(max_iter):
        grad = 2.0 * A.adjoint(A(y) - target)
        x_new = np.maximum(y - grad / L, 0.0)
        # gradient-mapping norm: zero exactly at a constrained stationary point
        if L * float(np.linalg.norm(x_new - y)) <= tol * scale:
            x = x_new
            break
        if np.dot(y - x_new, x_new - x) > 0:
            # momentum is pointing uphill; restart it
            t = 1.0
            y = x_new
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        x = x_new
    return x


def fit_isotonic_phi_prime_1d(ex_ante, ex_post, benefit, seed=0, tol=1e-8, max_iter=50_000):
    """Estimate a mean-centered non-decreasing ``phi'`` from 1-D samples.

    Args:
        ex_ante: 1-D sample before deployment.
        ex_post: 1-D sample after deployment.
        benefit: 1-D benefit of the deployed model.
        seed: used only when the two samples differ in size.
        tol: stopping tolerance of the projected gradient solver.

    Returns:
        IsotonicDerivative1D on the union of sample points, values mean zero.
    """
    if ex_ante.dim != 1 or ex_post.dim != 1:
        raise DomainError("isotonic estimation is one-dimensional")
    ex_ante, ex_post = _equalize(ex_ante, ex_post, seed)
    if ex_ante.n < MIN_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_SAMPLES} samples per distribution, got {ex_ante.n}")
    z, zp = _monotone_pairs(ex_ante, ex_post)
    target = _benefit_derivative(benefit, zp)
    knots = np.unique(np.concatenate([z, zp]))
    if knots.size == 1:
        return IsotonicDerivative1D(knots, np.zeros(1))
    A = _IncrementOperator(np.searchsorted(knots, z), np.searchsorted(knots, zp), knots.size)
    inc = solve_increments(A, target, tol=tol, max_iter=max_iter)
    g = np.concatenate([[0.0], np.cumsum(inc)])
    return IsotonicDerivative1D(knots, g - g.mean())


def isotonic_objective(g, ex_ante, ex_post, benefit, seed=0):
    """Mean squared residual ``(g(z'_i) - g(z_i) - B'(z'_i))^2`` over monotone pairs."""
    ex_ante, ex_post = _equalize(ex_ante, ex_post, seed)
    z, zp = _monotone_pairs(ex_ante, ex_post)
    r = g.derivative(zp) - g.derivative(z) - _benefit_derivative(benefit, zp)
    return float(np.mean(r * r))


def as_measure(x):
    """Convenience: wrap a 1-D array as a uniform measure."""
    return EmpiricalMeasure(np.asarray(x, dtype=float).reshape(-1, 1))

"""Paired least-squares estimate of a quadratic cost matrix.

With ``phi(z) = z^T S z / 2`` the first-order condition reads
``grad B(T(z)) = S (T(z) - z)``. Matching ex-ante to ex-post points by optimal
transport gives pairs ``x_i = T_hat(z_i) - z_i`` and ``b_i = grad B(T_hat(z_i))``,
and ``S`` follows from the multivariate regression ``b_i = S x_i + eps_i``.
"""

from dataclasses import dataclass

import numpy as np

from perfcost.errors import IllPosedError, ShapeError
from perfcost.measures import EmpiricalMeasure
from perfcost.ot import DEFAULT_CAP, exact_coupling, w2_1d

GAMMA_MIN = 1e-10
PSD_FLOOR = 1e-8


@dataclass
class PairedEstimate:
    sigma: np.ndarray  # raw unconstrained estimate
    sigma_psd: np.ndarray
    gram_eigenvalues: np.ndarray  # of X^T X / n, ascending
    n: int

    @property
    def gamma_min(self):
        return float(self.gram_eigenvalues[0])

    @property
    def gamma_max(self):
        return float(self.gram_eigenvalues[-1])


def match_pairs(ex_ante, ex_post, cap=DEFAULT_CAP):
    """Return ``(z_i, T_hat(z_i))`` rows for the optimal matching of equal-size samples."""
    if ex_ante.n != ex_post.n:
        raise ShapeError(f"paired estimation needs equal sizes, got {ex_ante.n} and {ex_post.n}")
    if ex_ante.dim != ex_post.dim:
        raise ShapeError("ex-ante and ex-post dimensions differ")
    if ex_ante.dim == 1 and ex_ante.is_uniform and ex_post.is_uniform:
        _, pairing = w2_1d(ex_ante, ex_post)
        return ex_ante.points, ex_post.points[pairing]
    plan = exact_coupling(ex_ante, ex_post, cap=cap).plan
    return ex_ante.points, ex_post.points[np.argmax(plan, axis=1)]


def paired_regression(X, Y):
    """Least squares for ``y_i = S x_i``; returns :class:`PairedEstimate`."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape != Y.shape:
        raise ShapeError(f"X {X.shape} and Y {Y.shape} differ")
    n = X.shape[0]
    gram = X.T @ X / n
    eig = np.linalg.eigvalsh(gram)
    if eig[0] < GAMMA_MIN:
        raise IllPosedError(
            f"design is rank deficient (smallest Gram eigenvalue {eig[0]:.3g}); "
            "use several deployments or a non-linear benefit"
        )
    # rows satisfy y_i^T = x_i^T S^T
    S = np.linalg.solve(X.T @ X, X.T @ Y).T
    sym = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(sym)
    psd = (V * np.maximum(w, PSD_FLOOR)) @ V.T
    return PairedEstimate(S, 0.5 * (psd + psd.T), eig, n)


def estimate_sigma_paired(ex_ante, ex_post, benefit, cap=DEFAULT_CAP):
    """Paired OT regression estimate of the quadratic cost matrix.

    ``ex_ante``, ``ex_post`` and ``benefit`` may each be a list (one entry per
    deployment); the pairs of all deployments are stacked into one regression.
    """
    if isinstance(ex_ante, EmpiricalMeasure):
        ex_ante, ex_post, benefit = [ex_ante], [ex_post], [benefit]
    if not (len(ex_ante) == len(ex_post) == len(benefit)) or not ex_ante:
        raise ShapeError("need one ex-ante sample, ex-post sample and benefit per deployment")
    xs, bs = [], []
    for P, Q, b in zip(ex_ante, ex_post, benefit):
        z, tz = match_pairs(P, Q, cap=cap)
        xs.append(tz - z)
        bs.append(np.asarray(b.grad(tz)).reshape(tz.shape))
    return paired_regression(np.vstack(xs), np.vstack(bs))


def proposition_bound(sigma_noise, gamma_max, gamma_min, n, d, failure_prob=0.05):
    """High-probability operator-norm bound on the regression error.

    ``30 sqrt(2) sigma sqrt(gamma_max) / gamma_min (sqrt(2d/n) + delta)`` with
    ``delta = sqrt(log(2 / failure_prob) / (2n))``.
    """
    delta = np.sqrt(np.log(2.0 / failure_prob) / (2.0 * n))
    return 30.0 * np.sqrt(2.0) * sigma_noise * np.sqrt(gamma_max) / gamma_min * (np.sqrt(2.0 * d / n) + delta)

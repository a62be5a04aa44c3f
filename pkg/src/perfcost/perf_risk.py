"""Performative risk: strategic OLS closed forms and logistic plug-in learning.

Logistic deployments ``theta = (alpha, beta)`` give agents the benefit
``-beta . x``; under ``phi(x) = x^T M x / 2`` they move to
``T_theta(x) = x - M^{-1} beta``. Labels never change when agents move.
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from perfcost.agents import LinearClassifier, Linear, best_response
from perfcost.datasets import credit_features
from perfcost.errors import DivergenceError, IdentifiabilityError, OptimizationError, ShapeError
from perfcost.measures import EmpiricalMeasure
from perfcost.potentials import QuadraticPotential
from perfcost.rng import make_rng, spawn_seed, standard_normal

PROB_CLIP = 1e-12


# ---------------------------------------------------------------- strategic OLS


@dataclass(frozen=True, eq=False)
class OlsWorld:
    """``X ~ N(0, I)``, ``Y = X . theta_star + eps``, agents pay ``(x-x')^T M (x-x') / 2``."""

    theta_star: np.ndarray
    M: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta_star, dtype=float))
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        if M.shape != (th.size, th.size):
            raise ShapeError(f"M has shape {M.shape}, expected {(th.size, th.size)}")
        if not np.allclose(M, M.T) or np.linalg.eigvalsh(M)[0] <= 0:
            raise ValueError("M must be symmetric positive definite")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "theta_star", th)
        object.__setattr__(self, "M", M)

    @property
    def dim(self):
        return self.theta_star.size


def strategic_ols_pr(theta, w: OlsWorld):
    """``sigma^2 + |theta - theta*|^2 + (theta^T M^{-1} theta)^2``."""
    th = np.asarray(theta, dtype=float)
    if th.shape != w.theta_star.shape:
        raise ShapeError(f"theta has shape {th.shape}, world has dimension {w.dim}")
    q = th @ np.linalg.solve(w.M, th)
    return float(w.sigma**2 + np.sum((th - w.theta_star) ** 2) + q * q)


def _ols_pr_grad(theta, w):
    Ainv_th = np.linalg.solve(w.M, theta)
    q = theta @ Ainv_th
    return 2 * (theta - w.theta_star) + 4 * q * Ainv_th


def strategic_ols_pr_mc(theta, w: OlsWorld, n=100_000, seed=0):
    """Monte Carlo performative risk with simulated agents.

    Returns ``(estimate, standard_error)``.
    """
    th = np.asarray(theta, dtype=float)
    rng = make_rng(seed)
    X = standard_normal(rng, (n, w.dim))
    eps = w.sigma * standard_normal(rng, n)
    Y = X @ w.theta_star + eps
    moved = best_response(QuadraticPotential.from_matrix(w.M), Linear(th), X)
    sq = (Y - moved @ th) ** 2
    return float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(n))


def misspecified_opt_scale(theta_star_sq_norm, tol=1e-12):
    """Unique root in ``(0, 1]`` of ``2 s c^3 + c - 1`` for ``s = |theta*|^2``."""
    s = float(theta_star_sq_norm)
    if s < 0:
        raise ValueError("squared norm must be nonnegative")
    if s == 0.0:
        return 1.0

    def f(c):
        return 2.0 * s * c**3 + c - 1.0

    lo, hi = 0.0, 1.0
    c = 1.0
    for _ in range(2000):
        c = 0.5 * (lo + hi)
        fc = f(c)
        if abs(fc) <= tol:
            break
        if fc < 0:
            lo = c
        else:
            hi = c
        if hi - lo <= np.finfo(float).eps * max(c, 1e-300):
            break
    # finish with Newton; f is smooth and increasing
    for _ in range(5):
        fc = f(c)
        if abs(fc) <= tol:
            break
        c = c - fc / (6.0 * s * c * c + 1.0)
    return float(min(max(c, np.finfo(float).tiny), 1.0))


def ols_min_pr(w: OlsWorld, grid_size=2001):
    """Numerical ``min_theta PR(theta)``: ray scan along ``theta*`` then quasi-Newton."""
    cs = np.linspace(0.0, 1.0, grid_size)
    vals = [strategic_ols_pr(c * w.theta_star, w) for c in cs]
    start = cs[int(np.argmin(vals))] * w.theta_star
    res = minimize(
        lambda t: strategic_ols_pr(t, w), start, jac=lambda t: _ols_pr_grad(t, w), method="BFGS", options={"gtol": 1e-12}
    )
    best = min(float(res.fun), float(np.min(vals)))
    return best, res.x


def ols_regret_of_misspecification(w: OlsWorld):
    """``PR(c theta*) - min PR`` where ``c theta*`` is optimal for the identity-cost model."""
    c = misspecified_opt_scale(float(w.theta_star @ w.theta_star))
    pr_hat = strategic_ols_pr(c * w.theta_star, w)
    pr_min, _ = ols_min_pr(w)
    return max(pr_hat - pr_min, 0.0)


def ols_oracle_summary(w: OlsWorld):
    c = misspecified_opt_scale(float(w.theta_star @ w.theta_star))
    pr_hat = strategic_ols_pr(c * w.theta_star, w)
    pr_min, _ = ols_min_pr(w)
    return {"c": c, "PR_c_theta_star": pr_hat, "PR_min_est": pr_min, "regret": max(pr_hat - pr_min, 0.0)}


# ---------------------------------------------------------------- logistic worlds


@dataclass(frozen=True, eq=False)
class LabeledSample:
    X: EmpiricalMeasure
    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if y.size != self.X.n:
            raise ShapeError(f"{y.size} labels for {self.X.n} points")
        if np.any((y != 0) & (y != 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class LabelModel:
    """``P(Y = 1 | x) = sigmoid(alpha + beta . x)``; ``threshold`` makes it deterministic."""

    alpha: float
    beta: tuple
    threshold: bool = False

    def prob(self, X):
        return expit(self.alpha + np.asarray(X) @ np.asarray(self.beta, dtype=float))

    def sample(self, X, rng):
        if self.threshold:
            return (self.alpha + np.asarray(X) @ np.asarray(self.beta, dtype=float) > 0).astype(float)
        return (rng.random(len(X)) < self.prob(X)).astype(float)

    @property
    def classifier(self):
        return LinearClassifier(self.alpha, np.asarray(self.beta, dtype=float))


@dataclass
class LogisticWorld:
    """Ground truth for the performative logistic experiments.

    ``features(n, rng)`` draws ex-ante attributes; labels follow ``label_model``
    on the ex-ante attributes and agents respond with the true ``M``.
    """

    M: np.ndarray
    label_model: LabelModel
    features: Callable = None
    deploy_cov: float = 0.25
    name: str = "credit"

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        if self.features is None:
            self.features = lambda n, rng: credit_features(n, rng)

    @property
    def dim(self):
        return self.M.shape[0]

    @property
    def potential(self):
        return QuadraticPotential.from_matrix(self.M)

    def ex_ante(self, n, seed):
        rng = make_rng(seed)
        X = np.asarray(self.features(n, spawn_seed(seed, 1)), dtype=float)
        return LabeledSample(EmpiricalMeasure(X), self.label_model.sample(X, rng))

    def respond(self, theta: LinearClassifier, sample: LabeledSample):
        moved = best_response(self.potential, theta.benefit(), sample.X.points)
        return LabeledSample(EmpiricalMeasure(moved.reshape(sample.X.points.shape)), sample.y)

    def ex_post(self, theta, n, seed):
        return self.respond(theta, self.ex_ante(n, seed))

    def deployments(self, K, seed, center: Optional[LinearClassifier] = None):
        """``K`` classifiers drawn from ``N(center, deploy_cov I)`` (center: the ex-ante optimum)."""
        c = (center or self.label_model.classifier).vector
        rng = make_rng(seed)
        draws = c + np.sqrt(self.deploy_cov) * standard_normal(rng, (K, c.size))
        return [LinearClassifier.from_vector(v) for v in draws]

    def simulator(self, n):
        """Closure ``(theta, rng) -> LabeledSample`` from ``Q_theta`` for RGD."""

        def draw(theta, rng):
            seed = int(rng.integers(0, 2**62))
            return self.ex_post(theta, n, seed)

        return draw


def csv_world(X, M, label_model, **kw):
    """World whose ex-ante attributes are resampled rows of ``X``."""
    X = np.asarray(X, dtype=float)

    def features(n, seed):
        return X[make_rng(seed).integers(0, X.shape[0], size=n)]

    return LogisticWorld(M, label_model, features, **kw)


def credit_world(M=None, alpha=0.5, beta=(-1.2, -0.6, -0.4), deploy_cov=0.25):
    """Default semi-synthetic world: three credit features, ``M = 0.1 I``."""
    M = 0.1 * np.eye(3) if M is None else M
    return LogisticWorld(np.asarray(M, dtype=float), LabelModel(alpha, tuple(beta)), deploy_cov=deploy_cov)


# ---------------------------------------------------------------- losses


def _ce_terms(logits, y):
    # -[y log p + (1-y) log(1-p)] with p clipped to [1e-12, 1 - 1e-12]
    lp = np.maximum(log_expit(logits), np.log(PROB_CLIP))
    lq = np.maximum(log_expit(-logits), np.log(PROB_CLIP))
    return -(y * lp + (1 - y) * lq)


def cross_entropy(theta: LinearClassifier, X, y):
    """Mean clipped cross-entropy of ``theta`` on ``(X, y)``."""
    return float(np.mean(_ce_terms(theta.logits(X), np.asarray(y, dtype=float))))


def _stack_plugin_data(ex_ante, ex_posts, deployed, A):
    """Pool features after undoing each deployment's estimated shift."""
    Xs, ys = [], []
    if ex_ante is not None:
        Xs.append(ex_ante.X.points)
        ys.append(ex_ante.y)
    for s, th in zip(ex_posts, deployed):
        # inverse estimated map: x_hat = x' + M_hat^{-1} beta_k
        Xs.append(s.X.points + A @ th.beta)
        ys.append(s.y)
    if not Xs:
        raise ValueError("no data")
    return np.vstack(Xs), np.concatenate(ys)


def performative_ce(v, X, y, A):
    """Summed loss and gradient in ``v = (alpha, beta)``.

    Logits are ``alpha + beta . x - beta^T A beta`` with ``A = M_hat^{-1}``.
    """
    alpha, beta = v[0], v[1:]
    logits = alpha + X @ beta - beta @ A @ beta
    loss = float(np.sum(_ce_terms(logits, y)))
    r = expit(logits) - y
    g_alpha = r.sum()
    g_beta = X.T @ r - r.sum() * ((A + A.T) @ beta)
    return loss, np.concatenate([[g_alpha], g_beta])


@dataclass(frozen=True)
class OptConfig:
    # "lbfgs" (quasi-Newton on the analytic gradient) or "gd" (backtracking)
    method: str = "lbfgs"
    lr: float = 1.0
    iters: int = 2000
    tol: float = 1e-10
    seed: int = 0


@dataclass
class PluginResult:
    classifier: LinearClassifier
    loss_trace: List[float] = field(default_factory=list)


def _minimize(fun, v0, opt: OptConfig):
    if opt.method == "gd":
        return _gradient_descent(fun, v0, opt)
    if opt.method != "lbfgs":
        raise ValueError(f"unknown optimizer {opt.method!r}")
    trace = []

    def wrapped(v):
        f, g = fun(v)
        if not np.isfinite(f):
            raise OptimizationError("non-finite loss; check the data scale or M_hat")
        trace.append(f)
        return f, g

    res = minimize(
        wrapped, np.array(v0, dtype=float), jac=True, method="L-BFGS-B",
        options={"maxiter": opt.iters, "ftol": opt.tol, "gtol": opt.tol},
    )
    return res.x, trace


def _gradient_descent(fun, v0, opt: OptConfig):
    """Gradient descent with Armijo backtracking on a mean loss."""
    v = np.array(v0, dtype=float)
    f, g = fun(v)
    if not np.isfinite(f):
        raise OptimizationError("non-finite loss at the starting point")
    trace = [f]
    step = opt.lr
    for _ in range(opt.iters):
        gg = float(g @ g)
        if gg <= opt.tol**2:
            break
        while True:
            cand = v - step * g
            fc, gc = fun(cand)
            if np.isfinite(fc) and fc <= f - 0.5 * step * gg:
                break
            step *= 0.5
            if step < 1e-16:
                return v, trace
        improvement = f - fc
        v, f, g = cand, fc, gc
        trace.append(f)
        step = min(step * 2.0, opt.lr)
        if improvement <= opt.tol * max(1.0, abs(f)):
            break
    return v, trace


def plugin_logistic(ex_ante, ex_posts: Sequence, deployed: Sequence, M_hat, opt: OptConfig = OptConfig(), init=None):
    """Minimize the estimated performative cross-entropy.

    Args:
        ex_ante: LabeledSample from the ex-ante distribution (or ``None``).
        ex_posts: LabeledSample per deployment, aligned with ``deployed``.
        deployed: the classifiers that induced ``ex_posts``.
        M_hat: estimated cost matrix.
        opt: gradient descent settings; the mean loss is optimized, which has
            the same minimizer as the summed loss.
        init: starting classifier; pooled static logistic fit by default.
    """
    ex_posts = list(ex_posts)
    deployed = list(deployed)
    if len(ex_posts) != len(deployed):
        raise ValueError("each ex-post sample needs the classifier that induced it")
    A = np.linalg.inv(np.atleast_2d(np.asarray(M_hat, dtype=float)))
    X, y = _stack_plugin_data(ex_ante, ex_posts, deployed, A)
    n = len(y)

    def fun(v):
        f, g = performative_ce(v, X, y, A)
        return f / n, g / n

    if init is None:
        v0, _ = _minimize(lambda v: tuple(t / n for t in performative_ce(v, X, y, np.zeros_like(A))), np.zeros(X.shape[1] + 1), opt)
    else:
        v0 = init.vector
    v, trace = _minimize(fun, v0, opt)
    return PluginResult(LinearClassifier.from_vector(v), trace)


def logistic_fit(X, y, opt: OptConfig = OptConfig()):
    """Ordinary logistic regression by the same optimizer."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    zero = np.zeros((X.shape[1], X.shape[1]))
    n = len(y)
    v, trace = _minimize(lambda v: tuple(t / n for t in performative_ce(v, X, y, zero)), np.zeros(X.shape[1] + 1), opt)
    return PluginResult(LinearClassifier.from_vector(v), trace)


@dataclass
class RgdResult:
    trajectory: List[LinearClassifier]
    loss_trace: List[float]


def rgd(world_sample: Callable, theta0: LinearClassifier, eta, T, seed=0, divergence=1e6):
    """Repeated gradient descent.

    Each round deploys ``theta_t``, draws ``world_sample(theta_t, rng)`` and
    takes one step ``theta_{t+1} = theta_t - eta * grad`` of the mean
    cross-entropy on that sample, treating the sample as fixed.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    rng = make_rng(seed)
    theta = theta0
    traj = [theta]
    losses = []
    zero = np.zeros((theta.dim, theta.dim))
    for t in range(T):
        s = world_sample(theta, rng)
        X = s.X.points if isinstance(s, LabeledSample) else s[0]
        y = s.y if isinstance(s, LabeledSample) else s[1]
        f, g = performative_ce(theta.vector, X, y, zero)
        losses.append(f / len(y))
        v = theta.vector - eta * g / len(y)
        if not np.all(np.isfinite(v)) or np.linalg.norm(v) > divergence:
            raise DivergenceError(f"RGD diverged at round {t + 1} (|theta| = {np.linalg.norm(v):.3g}); lower eta")
        theta = LinearClassifier.from_vector(v)
        traj.append(theta)
    return RgdResult(traj, losses)


def ls_baseline(ex_ante, ex_posts, deployed, cond_warn=1e12):
    """Least-squares cost matrix from mean shifts.

    Solves ``min_A sum_k |(mean Q_k - mean P) + A beta_k|^2`` and returns
    ``M_hat = A^{-1}`` (pseudo-inverse, with a warning when ``A`` is badly
    conditioned).
    """
    P = ex_ante.X if isinstance(ex_ante, LabeledSample) else ex_ante
    Qs = [q.X if isinstance(q, LabeledSample) else q for q in ex_posts]
    if len(Qs) != len(deployed):
        raise ValueError("each ex-post sample needs the classifier that induced it")
    d = P.dim
    B = np.column_stack([th.beta for th in deployed]) if deployed else np.zeros((d, 0))
    if B.shape[1] < d or np.linalg.matrix_rank(B) < d:
        raise IdentifiabilityError(f"deployed slopes span rank {np.linalg.matrix_rank(B) if B.size else 0} < {d}")
    mp = P.weights @ P.points
    S = np.column_stack([q.weights @ q.points - mp for q in Qs])
    A = -S @ B.T @ np.linalg.inv(B @ B.T)
    if np.linalg.cond(A) > cond_warn:
        warnings.warn("shift regression is badly conditioned; M_hat uses a pseudo-inverse", RuntimeWarning)
    return np.linalg.pinv(A)


# ---------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class PerformativeMetrics:
    accuracy: float
    cross_entropy: float
    n_eval: int
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0 or self.cross_entropy < 0:
            raise ValueError("metrics out of range")


def evaluate_performative(theta: LinearClassifier, world: LogisticWorld, n_eval=10_000, seed=0):
    """Accuracy and cross-entropy of ``theta`` on fresh agents responding to it."""
    if n_eval < 1:
        raise ValueError("n_eval must be at least 1")
    s = world.ex_post(theta, n_eval, seed)
    p = theta.predict_proba(s.X.points)
    acc = float(np.mean((p >= 0.5) == (s.y == 1)))
    ce = cross_entropy(theta, s.X.points, s.y)
    return PerformativeMetrics(acc, ce, n_eval, seed)


def performative_ce_se(theta, world, n_eval=10_000, seed=0):
    """Standard error of the evaluation cross-entropy."""
    s = world.ex_post(theta, n_eval, seed)
    t = _ce_terms(theta.logits(s.X.points), s.y)
    return float(t.std(ddof=1) / np.sqrt(len(t)))


_ORACLE_CACHE = {}


def oracle_classifier(world: LogisticWorld, n=100_000, seed=0, opt: OptConfig = OptConfig()):
    """Plug-in optimum with the true ``M`` on a large ex-ante sample (cached)."""
    key = (id(world), n, seed, opt)
    hit = _ORACLE_CACHE.get(key)
    # keep the world alive with its entry so the id cannot be recycled
    if hit is None or hit[0] is not world:
        big = world.ex_ante(n, spawn_seed(seed, 77))
        hit = (world, plugin_logistic(big, [], [], world.M, opt).classifier)
        _ORACLE_CACHE[key] = hit
    return hit[1]

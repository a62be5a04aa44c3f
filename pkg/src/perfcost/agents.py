"""Simulated strategic agents.

An agent at ``z`` facing benefit ``B`` and Bregman cost ``c_phi`` moves to
``argmax_{z'} B(z') - c_phi(z, z')``, i.e. solves the first-order condition
``grad phi(z') - grad B(z') = grad phi(z)``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from perfcost.errors import DomainError, OptimizationError, ShapeError
from perfcost.measures import EmpiricalMeasure, pushforward
from perfcost.potentials import IsotonicDerivative1D, QuadraticPotential, _batch

DOMAIN_FLOOR = 1e-9
FOC_TOL = 1e-10

KINDS = ("linear", "abs_linear", "power", "log")


@dataclass(frozen=True, eq=False)
class BenefitSpec:
    """Benefit ``B(x)`` with an exact gradient.

    ``linear``: ``theta . x``; ``abs_linear``: ``|theta| . x``;
    ``power``: ``sum_j theta_j x_j^p``; ``log``: ``sum_j theta_j log x_j``.
    Use the ``Linear``/``AbsLinear``/``Power``/``Log`` helpers below.
    """

    kind: str
    theta: np.ndarray
    p: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown benefit kind {self.kind!r}")
        th = np.atleast_1d(np.asarray(self.theta, dtype=float)).copy()
        if self.kind in ("power", "log") and np.any(th < 0):
            raise ValueError(f"{self.kind} benefit needs nonnegative theta")
        if self.kind == "power":
            if self.p is None or not 0 < self.p < 1:
                raise ValueError("power benefit needs an exponent in (0, 1)")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @property
    def dim(self):
        return self.theta.size

    @property
    def is_zero(self):
        return not np.any(self.theta)

    @property
    def constant_gradient(self):
        return self.kind in ("linear", "abs_linear")

    @property
    def positive_domain(self):
        return self.kind in ("power", "log")

    def scaled(self, c):
        """Same family with ``theta`` multiplied by ``c`` (abs taken where required)."""
        th = c * self.theta
        if self.kind in ("power", "log"):
            th = np.abs(th)
        return BenefitSpec(self.kind, th, self.p)

    def _check(self, X):
        if X.shape[1] != self.dim:
            raise ShapeError(f"benefit has dimension {self.dim}, points have {X.shape[1]}")
        if self.positive_domain and np.any(X <= 0):
            raise DomainError(f"{self.kind} benefit is only defined for positive coordinates")

    def value(self, x):
        X, single = _batch(x, self.dim)
        self._check(X)
        if self.kind == "linear":
            out = X @ self.theta
        elif self.kind == "abs_linear":
            out = X @ np.abs(self.theta)
        elif self.kind == "power":
            out = (X**self.p) @ self.theta
        else:
            out = np.log(X) @ self.theta
        return out[0] if single else out

    def grad(self, x):
        X, single = _batch(x, self.dim)
        self._check(X)
        out = self._grad(X)
        return out[0] if single else out

    def _grad(self, X):
        if self.kind == "linear":
            return np.broadcast_to(self.theta, X.shape).copy()
        if self.kind == "abs_linear":
            return np.broadcast_to(np.abs(self.theta), X.shape).copy()
        if self.kind == "power":
            return self.p * self.theta * X ** (self.p - 1.0)
        return self.theta / X

    def _hess_diag(self, X):
        if self.constant_gradient:
            return np.zeros_like(X)
        if self.kind == "power":
            return self.p * (self.p - 1.0) * self.theta * X ** (self.p - 2.0)
        return -self.theta / (X * X)

    def to_dict(self):
        d = {"kind": self.kind, "theta": self.theta.tolist()}
        if self.p is not None:
            d["p"] = self.p
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], np.asarray(d["theta"], dtype=float), d.get("p"))


def Linear(theta):
    return BenefitSpec("linear", theta)


def AbsLinear(beta):
    return BenefitSpec("abs_linear", beta)


def Power(theta, p=0.5):
    return BenefitSpec("power", theta, p)


def Log(theta):
    return BenefitSpec("log", theta)


def grad_benefit(b, z):
    return b.grad(z)


@dataclass(frozen=True)
class LinearClassifier:
    """Logistic-regression parameters ``(alpha, beta)``."""

    alpha: float
    beta: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        if not (np.isfinite(self.alpha) and np.all(np.isfinite(beta))):
            raise ValueError("classifier parameters must be finite")
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", beta)

    @property
    def dim(self):
        return self.beta.size

    @property
    def vector(self):
        return np.concatenate([[self.alpha], self.beta])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1:])

    def logits(self, X):
        return np.asarray(X, dtype=float) @ self.beta + self.alpha

    def predict_proba(self, X):
        return expit(self.logits(X))

    def benefit(self):
        """Benefit agents receive from this classifier: ``B(x) = -beta . x``."""
        return Linear(-self.beta)

    def to_dict(self):
        return {"alpha": self.alpha, "beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["alpha"], np.asarray(d["beta"], dtype=float))


@dataclass(frozen=True)
class ResponseConfig:
    """Knobs for the numeric best-response solvers."""

    bracket_scale: float = 10.0
    search_limit: float = 1e8
    max_newton: int = 200
    max_bisect: int = 300
    foc_tol: float = FOC_TOL


DEFAULT_RESPONSE = ResponseConfig()


def _is_diag_quadratic(p):
    return isinstance(p, QuadraticPotential) and np.count_nonzero(p.M - np.diag(np.diag(p.M))) == 0


def _bisect_monotone(F, z, lo_floor, width, cfg):
    """Vectorized root of non-decreasing scalar functions.

    ``F(x)`` evaluates all problems at once (arrays shaped like ``z``). The
    bracket starts at ``z +/- width`` (lower end clipped at ``lo_floor``) and is
    doubled until the sign changes or ``search_limit`` is hit.
    """
    lo = np.maximum(z - width, lo_floor)
    hi = np.maximum(z + width, lo + width)
    flo, fhi = F(lo), F(hi)
    w = np.array(width, dtype=float, copy=True) * np.ones_like(z)
    for _ in range(200):
        need_lo = flo > 0
        need_hi = fhi < 0
        if not (need_lo.any() or need_hi.any()):
            break
        w = np.where(need_lo | need_hi, 2.0 * w, w)
        if np.any(w > cfg.search_limit * (1.0 + np.abs(z))):
            bad = int(np.flatnonzero((w > cfg.search_limit * (1.0 + np.abs(z))) & (need_lo | need_hi))[0])
            raise OptimizationError(f"no bracket for the first-order condition at problem {bad}")
        lo = np.where(need_lo, np.maximum(z - w, lo_floor), lo)
        hi = np.where(need_hi, z + w, hi)
        flo = np.where(need_lo, F(lo), flo)
        fhi = np.where(need_hi, F(hi), fhi)
        stuck = need_lo & (lo <= lo_floor) & (flo > 0)
        if stuck.any():
            raise OptimizationError(f"first-order condition positive at the domain floor (problem {int(np.flatnonzero(stuck)[0])})")
    for _ in range(cfg.max_bisect):
        mid = 0.5 * (lo + hi)
        fm = F(mid)
        go_right = fm < 0
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(mid))):
            break
    # pick the endpoint with the smaller residual
    flo, fhi = np.abs(F(lo)), np.abs(F(hi))
    return np.where(flo <= fhi, lo, hi)


def _initial_width(p, b, Z, cfg):
    if isinstance(p, QuadraticPotential):
        curv = np.diag(p.M)[None, :]
    elif isinstance(p, IsotonicDerivative1D):
        curv = np.maximum(p.second_derivative(Z), 1e-12)
    else:
        curv = np.ones_like(Z)
    probe = np.maximum(Z + 1.0, DOMAIN_FLOOR) if b.positive_domain else Z + 1.0
    g = np.abs(b._grad(probe))
    return cfg.bracket_scale * (1.0 + np.minimum(g / curv, cfg.search_limit))


def _separable_solve(p, b, Z, cfg):
    """Coordinate-wise solve when both potential and benefit are separable."""
    if isinstance(p, IsotonicDerivative1D):
        dphi = lambda x: p.derivative(x)
    else:
        diag = np.diag(p.M)[None, :]
        dphi = lambda x: diag * x
    target = dphi(Z)
    floor = DOMAIN_FLOOR if b.positive_domain else -np.inf

    def F(x):
        xs = np.maximum(x, DOMAIN_FLOOR) if b.positive_domain else x
        return dphi(x) - b._grad(xs) - target

    width = _initial_width(p, b, Z, cfg)
    return _bisect_monotone(F, Z, floor, width, cfg)


def _newton_solve(p, b, Z, cfg):
    """Damped Newton ascent on ``U(x) = B(x) - phi(x) + grad phi(z) . x`` per point."""
    target = p.grad(Z)
    X = np.maximum(Z, 1.0) if b.positive_domain else Z.copy()
    d = Z.shape[1]
    eye = np.eye(d)

    def util(X, T):
        return b.value(X) - p.value(X) + np.einsum("ij,ij->i", T, X)

    active = np.ones(Z.shape[0], dtype=bool)
    for _ in range(cfg.max_newton):
        G = b._grad(X) - p.grad(X) + target
        res = np.linalg.norm(G, axis=1)
        active = res > cfg.foc_tol
        if not active.any():
            return X
        idx = np.flatnonzero(active)
        Xa, Ga = X[idx], G[idx]
        H = p.hessian(Xa) - b._hess_diag(Xa)[:, :, None] * eye  # -Hess(U), PSD
        H = H + 1e-12 * (1.0 + np.abs(H).max(axis=(1, 2)))[:, None, None] * eye
        step = np.linalg.solve(H, Ga[:, :, None])[:, :, 0]
        t = np.ones(idx.size)
        if b.positive_domain:
            neg = step < 0
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(neg, -(Xa - DOMAIN_FLOOR) / step, np.inf)
            t = np.minimum(1.0, 0.99 * frac.min(axis=1))
        u0 = util(Xa, target[idx])
        slope = np.einsum("ij,ij->i", Ga, step)
        for _ in range(60):
            Xn = Xa + t[:, None] * step
            ok = util(Xn, target[idx]) >= u0 + 1e-4 * t * slope - 1e-14 * (1.0 + np.abs(u0))
            if ok.all():
                break
            t = np.where(ok, t, 0.5 * t)
        X[idx] = Xa + t[:, None] * step
    G = b._grad(X) - p.grad(X) + target
    bad = np.flatnonzero(np.linalg.norm(G, axis=1) > 1e3 * cfg.foc_tol)
    if bad.size:
        raise OptimizationError(f"Newton best response did not converge at point {int(bad[0])}")
    return X


def best_response(p, b, z, cfg: ResponseConfig = DEFAULT_RESPONSE):
    """Utility-maximizing move of the agent(s) at ``z``.

    Quadratic potential with a constant-gradient benefit uses the closed form
    ``z + M^{-1} grad B``. Other separable problems are solved per coordinate
    by bracketed bisection on the monotone first-order condition; the rest by
    damped Newton on the concave utility.
    """
    Z, single = _batch(z, p.dim)
    if b.dim != p.dim:
        raise ShapeError(f"benefit dimension {b.dim} != potential dimension {p.dim}")
    if b.is_zero:
        out = Z.copy()
    elif isinstance(p, QuadraticPotential) and b.constant_gradient:
        out = Z + np.linalg.solve(p.M, b._grad(Z[:1])[0])[None, :]
    elif isinstance(p, IsotonicDerivative1D) or _is_diag_quadratic(p):
        out = _separable_solve(p, b, Z, cfg)
    else:
        out = _newton_solve(p, b, Z, cfg)
    return out[0] if single else out


def respond_measure(p, b, m, cfg: ResponseConfig = DEFAULT_RESPONSE):
    """Ex-post measure ``(T_theta)_# m``; weights are preserved."""
    return pushforward(m, lambda Z: best_response(p, b, Z, cfg), batched=True)


def foc_residual(p, b, z, z_new):
    """``|grad B(z') - grad phi(z') + grad phi(z)|`` per point."""
    Z, _ = _batch(z, p.dim)
    X, _ = _batch(z_new, p.dim)
    Xs = np.maximum(X, DOMAIN_FLOOR) if b.positive_domain else X
    return np.linalg.norm(b._grad(Xs) - p.grad(X) + p.grad(Z), axis=1)


def utility(p, b, z, z_new):
    """``B(z') - c_phi(z, z')`` per point."""
    return np.atleast_1d(b.value(z_new)) - np.atleast_1d(p.bregman(z, z_new))

"""Convex potentials, their gradients, and the Bregman costs they induce.

Three families are supported:

* ``QuadraticPotential``: ``phi(z) = z^T M z / 2`` with ``M = L L^T``.
* ``IsotonicDerivative1D``: a non-decreasing piecewise-linear ``phi'`` on knots,
  extended by constants outside the knot range.
* ``ConvexNetPotential``: ``phi(x) = sum_j delta_j softplus(omega_j . x + kappa_j)``
  with ``delta >= 0``.

All functions accept either a single point (1-D array) or a batch of points
(``(n, d)`` array) and return matching shapes.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import expit

from perfcost.errors import ShapeError

CHOL_FLOOR = 1e-8


def _batch(z, dim):
    """Coerce ``z`` to an ``(n, dim)`` array; report whether it was one point.

    In one dimension a flat array of length > 1 is read as a batch of scalars.
    """
    a = np.asarray(z, dtype=float)
    if a.ndim == 0:
        a, single = a.reshape(1, 1), True
    elif a.ndim == 1:
        if dim == 1 and a.size > 1:
            a, single = a.reshape(-1, 1), False
        else:
            a, single = a.reshape(1, -1), True
    else:
        single = False
    if a.ndim != 2 or a.shape[1] != dim:
        raise ShapeError(f"expected points of dimension {dim}, got shape {np.shape(z)}")
    return a, single


@dataclass(frozen=True, eq=False)
class QuadraticPotential:
    """``phi(z) = z^T M z / 2`` parameterized by a lower Cholesky factor."""

    chol: np.ndarray

    family = "quadratic"

    def __post_init__(self):
        L = np.tril(np.atleast_2d(np.asarray(self.chol, dtype=float)))
        if L.shape[0] != L.shape[1]:
            raise ShapeError(f"Cholesky factor must be square, got {L.shape}")
        idx = np.diag_indices_from(L)
        L[idx] = np.maximum(L[idx], CHOL_FLOOR)
        L.setflags(write=False)
        object.__setattr__(self, "chol", L)
        M = L @ L.T
        M.setflags(write=False)
        object.__setattr__(self, "M", M)

    @classmethod
    def from_matrix(cls, M, floor=CHOL_FLOOR):
        """Project a square matrix onto PD (symmetrize, clip eigenvalues) and factor it."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        S = 0.5 * (M + M.T)
        w, V = np.linalg.eigh(S)
        w = np.maximum(w, floor**2)
        # QR of the symmetric square root factors S even when it is near singular
        R = np.linalg.qr((V * np.sqrt(w)).T, mode="r")
        L = R.T * np.where(np.diag(R) < 0, -1.0, 1.0)
        return cls(L)

    @property
    def dim(self):
        return self.chol.shape[0]

    def value(self, z):
        Z, single = _batch(z, self.dim)
        out = 0.5 * np.einsum("ij,jk,ik->i", Z, self.M, Z)
        return out[0] if single else out

    def grad(self, z):
        Z, single = _batch(z, self.dim)
        out = Z @ self.M.T
        return out[0] if single else out

    def hessian(self, z):
        Z, single = _batch(z, self.dim)
        H = np.broadcast_to(self.M, (Z.shape[0],) + self.M.shape)
        return H[0] if single else H

    def bregman(self, y, z):
        Y, s1 = _batch(y, self.dim)
        Z, s2 = _batch(z, self.dim)
        D = Z - Y
        out = 0.5 * np.einsum("ij,jk,ik->i", D, self.M, D)
        return out[0] if (s1 and s2) else out

    def to_dict(self):
        return {"family": self.family, "chol": self.chol.tolist()}


@dataclass(frozen=True, eq=False)
class IsotonicDerivative1D:
    """Non-decreasing piecewise-linear derivative ``phi'`` on ``knots``."""

    knots: np.ndarray
    values: np.ndarray

    family = "isotonic"
    dim = 1

    def __post_init__(self):
        t = np.asarray(self.knots, dtype=float).reshape(-1)
        g = np.asarray(self.values, dtype=float).reshape(-1)
        if t.size < 1 or t.shape != g.shape:
            raise ShapeError(f"knots and values must be non-empty and equally long ({t.size}, {g.size})")
        if np.any(np.diff(t) <= 0):
            raise ValueError("knots must be strictly increasing")
        if np.any(np.diff(g) < -1e-12):
            raise ValueError("values must be non-decreasing")
        g = np.maximum.accumulate(g)
        t.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "knots", t)
        object.__setattr__(self, "values", g)
        # integral of phi' from knots[0] up to each knot (trapezoid is exact here)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(t))])
        cum.setflags(write=False)
        object.__setattr__(self, "_cum", cum)

    def _scalars(self, z):
        a = np.asarray(z, dtype=float)
        if a.ndim == 2:
            if a.shape[1] != 1:
                raise ShapeError(f"isotonic potential is 1-D, got points of shape {a.shape}")
            return a[:, 0], "col"
        if a.ndim == 1 and a.size == 1:
            return a.reshape(1), "vec1"
        if a.ndim == 0:
            return a.reshape(1), "scalar"
        return a, "flat"

    @staticmethod
    def _restore(out, kind, as_col):
        if kind == "scalar":
            return out[0]
        if kind == "vec1":
            return out.reshape(1) if as_col else out[0]
        if kind == "col" and as_col:
            return out[:, None]
        return out

    def derivative(self, t):
        """``phi'(t)`` for an array of scalars."""
        return np.interp(t, self.knots, self.values)

    def antiderivative(self, t):
        """``int_{knots[0]}^t phi'(s) ds`` in closed form."""
        t = np.asarray(t, dtype=float)
        k, g, cum = self.knots, self.values, self._cum
        out = np.empty_like(t)
        lo = t <= k[0]
        hi = t >= k[-1]
        mid = ~(lo | hi)
        out[lo] = g[0] * (t[lo] - k[0])
        out[hi] = cum[-1] + g[-1] * (t[hi] - k[-1])
        if np.any(mid):
            j = np.searchsorted(k, t[mid], side="right") - 1
            h = t[mid] - k[j]
            slope = (g[j + 1] - g[j]) / (k[j + 1] - k[j])
            out[mid] = cum[j] + g[j] * h + 0.5 * slope * h * h
        return out

    def value(self, z):
        s, kind = self._scalars(z)
        return self._restore(self.antiderivative(s), kind, as_col=False)

    def grad(self, z):
        s, kind = self._scalars(z)
        return self._restore(self.derivative(s), kind, as_col=True)

    def second_derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.knots.size < 2:
            return np.zeros_like(t)
        slopes = np.diff(self.values) / np.diff(self.knots)
        j = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, slopes.size - 1)
        inside = (t >= self.knots[0]) & (t < self.knots[-1])
        return np.where(inside, slopes[j], 0.0)

    def bregman(self, y, z):
        ys, k1 = self._scalars(y)
        zs, k2 = self._scalars(z)
        ys, zs = np.broadcast_arrays(ys, zs)
        out = self.antiderivative(zs) - self.antiderivative(ys) - self.derivative(ys) * (zs - ys)
        out = np.maximum(out, 0.0)
        return out[0] if (k1 in ("scalar", "vec1") and k2 in ("scalar", "vec1")) else out

    def centered(self):
        """Copy with ``phi'`` shifted to mean zero over the knots."""
        return IsotonicDerivative1D(self.knots, self.values - self.values.mean())

    def to_dict(self):
        return {"family": self.family, "knots": self.knots.tolist(), "values": self.values.tolist()}


def softplus(t):
    return np.logaddexp(0.0, t)


@dataclass(frozen=True, eq=False)
class ConvexNetPotential:
    """Single-hidden-layer softplus network with nonnegative output weights."""

    omega: np.ndarray
    kappa: np.ndarray
    delta: np.ndarray

    family = "convex_net"

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.omega, dtype=float))
        k = np.asarray(self.kappa, dtype=float).reshape(-1)
        dl = np.asarray(self.delta, dtype=float).reshape(-1)
        if not (W.shape[0] == k.size == dl.size):
            raise ShapeError(f"omega {W.shape}, kappa {k.size}, delta {dl.size} disagree on hidden width")
        if np.any(dl < 0):
            raise ValueError("delta must be nonnegative")
        for name, a in (("omega", W), ("kappa", k), ("delta", dl)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def dim(self):
        return self.omega.shape[1]

    @property
    def hidden(self):
        return self.omega.shape[0]

    def _pre(self, X):
        return X @ self.omega.T + self.kappa

    def value(self, z):
        X, single = _batch(z, self.dim)
        out = softplus(self._pre(X)) @ self.delta
        return out[0] if single else out

    def grad(self, z):
        X, single = _batch(z, self.dim)
        out = (expit(self._pre(X)) * self.delta) @ self.omega
        return out[0] if single else out

    def hessian(self, z):
        X, single = _batch(z, self.dim)
        s = expit(self._pre(X))
        w = s * (1.0 - s) * self.delta
        H = np.einsum("nh,hi,hj->nij", w, self.omega, self.omega)
        return H[0] if single else H

    def bregman(self, y, z):
        Y, s1 = _batch(y, self.dim)
        Z, s2 = _batch(z, self.dim)
        out = self.value(Z) - self.value(Y) - np.einsum("ij,ij->i", self.grad(Y), Z - Y)
        out = np.maximum(out, 0.0)
        return out[0] if (s1 and s2) else out

    def to_dict(self):
        return {
            "family": self.family,
            "omega": self.omega.tolist(),
            "kappa": self.kappa.tolist(),
            "delta": self.delta.tolist(),
        }


PotentialModel = Union[QuadraticPotential, IsotonicDerivative1D, ConvexNetPotential]


def grad_potential(p: PotentialModel, z):
    return p.grad(z)


def bregman_cost(p: PotentialModel, y, z):
    """``phi(z) - phi(y) - grad phi(y) . (z - y)``."""
    return p.bregman(y, z)


def integrate_isotonic(p: IsotonicDerivative1D, anchor):
    """Return ``phi`` with ``phi' = p`` and ``phi(anchor) = 0``."""
    if not p.knots[0] <= anchor <= p.knots[-1]:
        raise ValueError(f"anchor {anchor} outside knot range [{p.knots[0]}, {p.knots[-1]}]")
    offset = float(p.antiderivative(np.array([anchor]))[0])

    def phi(t):
        a = np.asarray(t, dtype=float)
        out = p.antiderivative(np.atleast_1d(a)) - offset
        return out.reshape(a.shape) if a.ndim else float(out[0])

    return phi


def potential_from_dict(d):
    fam = d.get("family")
    if fam == "quadratic":
        return QuadraticPotential(np.array(d["chol"]))
    if fam == "isotonic":
        return IsotonicDerivative1D(np.array(d["knots"]), np.array(d["values"]))
    if fam == "convex_net":
        return ConvexNetPotential(np.array(d["omega"]), np.array(d["kappa"]), np.array(d["delta"]))
    raise ValueError(f"unknown potential family {fam!r}")

"""Plug a fitted potential into the first-order condition to get ``T_theta``."""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from perfcost.agents import DOMAIN_FLOOR, BenefitSpec, ResponseConfig, best_response
from perfcost.errors import InversionError
from perfcost.potentials import ConvexNetPotential, IsotonicDerivative1D, QuadraticPotential, _batch


@dataclass(frozen=True)
class ResponseMap:
    forward: Callable
    inverse: Callable
    benefit: BenefitSpec


def _invert_isotonic(p, c):
    """Solve ``phi'(z) = c`` elementwise; flat pieces resolve to their midpoint."""
    k, g = p.knots, p.values
    lo_bad = c < g[0] - 1e-12
    hi_bad = c > g[-1] + 1e-12
    if np.any(lo_bad | hi_bad):
        i = int(np.flatnonzero(lo_bad | hi_bad)[0])
        raise InversionError(f"value {c[i]:.6g} outside the range [{g[0]:.6g}, {g[-1]:.6g}] of the fitted phi'")
    c = np.clip(c, g[0], g[-1])
    # first knot with g >= c, interpolated from the left neighbour
    j = np.searchsorted(g, c, side="left")
    jm = np.maximum(j - 1, 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        left = np.where(j == 0, k[0], k[jm] + (c - g[jm]) / (g[j] - g[jm]) * (k[j] - k[jm]))
    # last knot with g <= c, interpolated toward the right neighbour
    i = np.searchsorted(g, c, side="right") - 1
    ip = np.minimum(i + 1, k.size - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        right = np.where(i == k.size - 1, k[-1], k[i] + (c - g[i]) / (g[ip] - g[i]) * (k[ip] - k[i]))
    return 0.5 * (left + right)


def _isotonic_forward(p, b, z, iters=200):
    """Best response with the move confined to the hull of the knots and ``z``.

    The fitted ``phi'`` is constant outside its knots, so the cost stops
    growing there and the unrestricted problem can be unbounded. Responses
    are searched on ``[min(z, k_0), max(z, k_last)]`` and stop at the edge
    when the first-order condition has no root inside.
    """
    floor = DOMAIN_FLOOR if b.positive_domain else -np.inf
    target = p.derivative(z)

    def F(x):
        return p.derivative(x) - b.grad(x[:, None]).reshape(-1) - target

    lo = np.maximum(np.minimum(z, p.knots[0]), floor)
    hi = np.maximum(np.maximum(z, p.knots[-1]), lo)
    f_lo, f_hi = F(lo), F(hi)
    out = np.where(f_lo >= 0, lo, hi)
    todo = (f_lo < 0) & (f_hi > 0)
    a, c = lo[todo], hi[todo]
    zt = target[todo]
    for _ in range(iters):
        mid = 0.5 * (a + c)
        fm = p.derivative(mid) - b.grad(mid[:, None]).reshape(-1) - zt
        right = fm < 0
        a = np.where(right, mid, a)
        c = np.where(right, c, mid)
        if np.all(c - a <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(mid))):
            break
    out[todo] = 0.5 * (a + c)
    return out


def _invert_gradient(p, C, max_iter=200, tol=1e-10):
    """Minimize ``phi(z) - c . z`` by damped Newton for each row of ``C``."""
    Z = np.zeros_like(C)
    d = C.shape[1]
    for _ in range(max_iter):
        G = p.grad(Z) - C
        if np.all(np.linalg.norm(G, axis=1) <= tol):
            return Z
        H = p.hessian(Z) + 1e-12 * np.eye(d)
        step = np.linalg.solve(H, G[:, :, None])[:, :, 0]
        f0 = p.value(Z) - np.einsum("ij,ij->i", C, Z)
        t = np.ones(Z.shape[0])
        for _ in range(60):
            Zn = Z - t[:, None] * step
            ok = p.value(Zn) - np.einsum("ij,ij->i", C, Zn) <= f0 - 1e-4 * t * np.einsum("ij,ij->i", G, step) + 1e-14
            if ok.all():
                break
            t = np.where(ok, t, 0.5 * t)
        Z = Z - t[:, None] * step
    bad = np.flatnonzero(np.linalg.norm(p.grad(Z) - C, axis=1) > 1e3 * tol)
    if bad.size:
        raise InversionError(f"could not invert the potential gradient at point {int(bad[0])}")
    return Z


def estimate_response_map(p, b: BenefitSpec, target_theta=None, cfg: ResponseConfig = ResponseConfig()):
    """Forward and inverse response maps under potential ``p``.

    Args:
        p: fitted strictly convex potential.
        b: benefit family; its parameters are replaced by ``target_theta``
            when that is given.

    Returns:
        ResponseMap whose ``inverse`` solves
        ``grad phi(z) = grad phi(z') - grad B(z')`` for ``z``.
    """
    if target_theta is not None:
        b = BenefitSpec(b.kind, np.asarray(target_theta, dtype=float), b.p)

    def forward(z):
        if isinstance(p, IsotonicDerivative1D) and not b.is_zero:
            Z, single = _batch(z, 1)
            out = _isotonic_forward(p, b, Z[:, 0])[:, None]
            return out[0] if single else out
        return best_response(p, b, z, cfg)

    def inverse(zp):
        Zp, single = _batch(zp, p.dim)
        if b.is_zero:
            out = Zp.copy()
        else:
            gB = b.grad(Zp).reshape(Zp.shape)
            if isinstance(p, QuadraticPotential):
                out = Zp - np.linalg.solve(p.M, gB.T).T
            elif isinstance(p, IsotonicDerivative1D):
                c = p.derivative(Zp[:, 0]) - gB[:, 0]
                out = _invert_isotonic(p, c)[:, None]
            elif isinstance(p, ConvexNetPotential):
                out = _invert_gradient(p, p.grad(Zp) - gB)
            else:
                raise TypeError(f"unsupported potential {type(p).__name__}")
        return out[0] if single else out

    return ResponseMap(forward, inverse, b)

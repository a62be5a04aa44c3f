"""Training the softplus convex-network potential by OT alignment."""

from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.special import expit

from perfcost.errors import LearningRateError, ShapeError
from perfcost.measures import EmpiricalMeasure, mean as mean_point
from perfcost.ot import Coupling, exact_coupling
from perfcost.potentials import ConvexNetPotential
from perfcost.rng import make_rng, standard_normal


@dataclass(frozen=True)
class NetConfig:
    hidden: int = 5
    seed: int = 0
    lr: float = 1e-2
    epochs: int = 500
    # gradient steps taken between coupling refreshes
    inner_steps: int = 5
    # "adam" or "gd"; both project delta onto [0, inf) after every step
    optimizer: str = "adam"


@dataclass
class NetFit:
    potential: ConvexNetPotential
    loss_trace: List[float] = field(default_factory=list)


def init_net(dim, hidden, seed, center=None):
    """Random start: ``omega ~ N(0, 1/d)``, ``delta = 1/h``.

    ``kappa`` puts every unit's kink through ``center`` (zero by default).
    """
    rng = make_rng(seed)
    omega = standard_normal(rng, (hidden, dim)) / np.sqrt(dim)
    kappa = np.zeros(hidden) if center is None else -omega @ np.asarray(center, dtype=float)
    return ConvexNetPotential(omega, kappa, np.full(hidden, 1.0 / hidden))


def grad_vjp(net, X, R, w):
    """Gradient in ``(omega, kappa, delta)`` of ``sum_i w_i R_i . grad_phi(X_i)``."""
    A = X @ net.omega.T + net.kappa
    S = expit(A)
    S1 = S * (1.0 - S)
    P = R @ net.omega.T  # omega_j . r_i
    wS = w[:, None] * S
    wS1P = w[:, None] * S1 * P
    g_delta = np.einsum("ih,ih->h", wS, P)
    g_kappa = net.delta * wS1P.sum(axis=0)
    g_omega = net.delta[:, None] * (wS.T @ R + wS1P.T @ X)
    return g_omega, g_kappa, g_delta


def _pairs(coupling):
    rows, cols = np.nonzero(coupling.plan)
    return rows, cols, coupling.plan[rows, cols]


def net_loss_and_grad(net, Z, Zp, bp, w):
    """OT loss ``sum w |psi(z) - psi(z') + b'|^2`` over matched pairs and its gradient."""
    R = net.grad(Z) - net.grad(Zp) + bp
    loss = float(w @ np.einsum("ij,ij->i", R, R))
    go1, gk1, gd1 = grad_vjp(net, Z, R, w)
    go2, gk2, gd2 = grad_vjp(net, Zp, R, w)
    return loss, (2 * (go1 - go2), 2 * (gk1 - gk2), 2 * (gd1 - gd2))


def _step(net, grads, lr):
    go, gk, gd = grads
    return ConvexNetPotential(
        net.omega - lr * go,
        net.kappa - lr * gk,
        np.maximum(net.delta - lr * gd, 0.0),
    )


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, net, grads):
        if self.m is None:
            self.m = [np.zeros_like(g) for g in grads]
            self.v = [np.zeros_like(g) for g in grads]
        self.t += 1
        upd = []
        for i, g in enumerate(grads):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mh = self.m[i] / (1 - self.b1**self.t)
            vh = self.v[i] / (1 - self.b2**self.t)
            upd.append(mh / (np.sqrt(vh) + self.eps))
        return _step(net, upd, self.lr)


def fit_convex_net(ex_ante, ex_post, benefit, net: NetConfig = NetConfig(), init=None):
    """Fit ``phi`` as a convex softplus network from one ex-ante/ex-post pair.

    Alternates an exact coupling between ``(grad phi)_# P`` and
    ``(grad phi - grad B)_# Q`` with ``inner_steps`` projected gradient steps
    on the OT loss at that fixed coupling. The default start centers the
    units' kinks on the ex-ante mean.
    """
    if net.hidden < 1:
        raise ValueError("hidden width must be at least 1")
    if ex_ante.dim != ex_post.dim or benefit.dim != ex_ante.dim:
        raise ShapeError("ex-ante, ex-post, and benefit dimensions differ")
    if ex_ante.n != ex_post.n:
        m = min(ex_ante.n, ex_post.n)
        ex_ante = ex_ante.subsample(m, net.seed)
        ex_post = ex_post.subsample(m, net.seed + 1)
    if net.optimizer not in ("adam", "gd"):
        raise ValueError(f"unknown optimizer {net.optimizer!r}")
    model = init if init is not None else init_net(ex_ante.dim, net.hidden, net.seed, mean_point(ex_ante))
    adam = _Adam(net.lr) if net.optimizer == "adam" else None
    Z, Zp = ex_ante.points, ex_post.points
    bp = benefit.grad(Zp)
    trace = []
    initial = None
    rows = cols = w = None
    for epoch in range(net.epochs):
        if epoch % max(1, net.inner_steps) == 0:
            src = EmpiricalMeasure(model.grad(Z), ex_ante.weights)
            dst = EmpiricalMeasure(model.grad(Zp) - bp, ex_post.weights)
            rows, cols, w = _pairs(exact_coupling(src, dst))
        loss, grads = net_loss_and_grad(model, Z[rows], Zp[cols], bp[cols], w)
        if initial is None:
            initial = loss
        if not np.isfinite(loss) or loss > 10 * initial:
            raise LearningRateError(f"loss diverged at epoch {epoch} ({loss:.3g} vs initial {initial:.3g}); lower lr")
        trace.append(loss)
        model = adam.step(model, grads) if adam else _step(model, grads, net.lr)
    return NetFit(model, trace)


def ot_loss(p, coupling: Coupling, benefit):
    """``sum_ij plan_ij |grad phi(z_i) - grad phi(z'_j) + grad B(z'_j)|^2``.

    The coupling's source is the ex-ante sample and its target the ex-post one.
    """
    if coupling.source.dim != p.dim or coupling.target.dim != p.dim:
        raise ShapeError("coupling and potential dimensions differ")
    rows, cols, w = _pairs(coupling)
    Z = coupling.source.points[rows]
    Zp = coupling.target.points[cols]
    R = np.atleast_2d(p.grad(Z)) - np.atleast_2d(p.grad(Zp)) + np.atleast_2d(benefit.grad(Zp))
    R = R.reshape(len(w), -1)
    return float(w @ np.einsum("ij,ij->i", R, R))

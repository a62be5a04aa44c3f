import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfcost.errors import ShapeError, SizeError
from perfcost.measures import EmpiricalMeasure
from perfcost.ot import (
    Coupling,
    cost_matrix,
    exact_coupling,
    free_support_barycenter,
    sinkhorn_coupling,
    w2_1d,
    w2_cost,
)


def brute_force(x, y):
    C = cost_matrix(x, y)
    n = len(x)
    return min(C[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n))) / n


def um(x):
    return EmpiricalMeasure(np.asarray(x, dtype=float))


def test_w2_1d_examples():
    cost, pairing = w2_1d(um([0, 1]), um([2, 3]))
    assert cost == pytest.approx(4.0)
    assert list(pairing) == [0, 1]
    assert w2_1d(um([3, 1, 2]), um([3, 1, 2]))[0] == 0.0
    assert w2_1d(um([0]), um([5]))[0] == 25.0


def test_w2_1d_rejects_2d():
    with pytest.raises(ShapeError):
        w2_1d(um([[0, 1]]), um([[0, 1]]))


def test_w2_1d_weighted_matches_lp():
    a = EmpiricalMeasure([[0.0], [1.0], [4.0]], [0.2, 0.5, 0.3])
    b = EmpiricalMeasure([[2.0], [3.0]], [0.6, 0.4])
    cost, pairing = w2_1d(a, b)
    assert pairing is None
    assert cost == pytest.approx(w2_cost(exact_coupling(a, b)), abs=1e-9)


def test_exact_coupling_examples():
    c = exact_coupling(um([[0, 0], [1, 0]]), um([[0, 1], [1, 1]]))
    assert np.allclose(c.plan, np.eye(2) / 2)
    assert w2_cost(c) == pytest.approx(1.0)
    a = um(np.random.default_rng(0).normal(size=(6, 2)))
    c = exact_coupling(a, a)
    assert np.allclose(c.plan, np.eye(6) / 6) and w2_cost(c) == 0.0


def test_exact_coupling_n7_brute_force():
    rng = np.random.default_rng(7)
    x, y = rng.normal(size=(7, 2)), rng.normal(size=(7, 2))
    assert w2_cost(exact_coupling(um(x), um(y))) == pytest.approx(brute_force(x, y), abs=1e-12)


def test_exact_coupling_cap():
    a = um(np.zeros((30, 1)))
    with pytest.raises(SizeError, match="sinkhorn"):
        exact_coupling(a, a, cap=100)


def test_zero_weight_atoms_dropped():
    a = EmpiricalMeasure([[0.0], [100.0], [1.0]], [0.5, 0.0, 0.5])
    b = um([[0.0], [1.0]])
    c = exact_coupling(a, b)
    assert np.all(c.plan[1] == 0)
    assert w2_cost(c) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_general_weights_marginals_and_lower_bound(n, m, seed):
    rng = np.random.default_rng(seed)
    wa = rng.random(n) + 0.05
    wb = rng.random(m) + 0.05
    a = EmpiricalMeasure(rng.normal(size=(n, 2)), wa / wa.sum())
    b = EmpiricalMeasure(rng.normal(size=(m, 2)), wb / wb.sum())
    c = exact_coupling(a, b)
    assert c.marginal_error() <= 1e-9
    assert np.all(c.plan >= -1e-15)
    # the independent coupling is feasible, so it cannot beat the optimum
    indep = Coupling(np.outer(a.weights, b.weights), a, b)
    assert w2_cost(c) <= w2_cost(indep) + 1e-12


def test_sinkhorn_close_to_exact():
    rng = np.random.default_rng(7)
    a, b = um(rng.normal(size=(7, 2))), um(rng.normal(size=(7, 2)))
    s = sinkhorn_coupling(a, b, eps=1e-3, tol=1e-9)
    exact = w2_cost(exact_coupling(a, b))
    assert abs(w2_cost(s) - exact) <= 0.02 * exact
    # small eps converges slowly; a moderate eps must meet the marginal tolerance
    m = sinkhorn_coupling(a, b, eps=5e-2, tol=1e-9)
    assert m.meta["converged"]
    assert np.abs(m.plan.sum(axis=1) - a.weights).sum() <= 1e-9


def test_sinkhorn_identical_inputs_near_diagonal():
    a = um(np.arange(5.0))
    s = sinkhorn_coupling(a, a, eps=1e-2)
    assert np.all(np.argmax(s.plan, axis=1) == np.arange(5))
    assert w2_cost(s) <= 1e-2 * 5 * np.log(5) * 16


def test_sinkhorn_nonconvergence_is_flagged():
    rng = np.random.default_rng(1)
    a, b = um(rng.normal(size=(6, 1))), um(rng.normal(size=(6, 1)))
    s = sinkhorn_coupling(a, b, eps=1e-4, max_iter=3, tol=1e-14)
    assert s.meta["converged"] is False


def test_w2_cost_bounded_by_any_plan():
    rng = np.random.default_rng(2)
    a, b = um(rng.normal(size=(5, 2))), um(rng.normal(size=(5, 2)))
    perm = Coupling(np.eye(5)[::-1] / 5, a, b)
    assert w2_cost(perm) >= w2_cost(exact_coupling(a, b)) - 1e-12


def test_triangle_inequality():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a, b, c = (um(rng.normal(size=(6, 2))) for _ in range(3))
        d = lambda x, y: np.sqrt(w2_cost(exact_coupling(x, y)))  # noqa: E731
        assert d(a, b) <= d(a, c) + d(c, b) + 1e-12


def test_barycenter_single_measure():
    a = um(np.random.default_rng(0).normal(size=(8, 2)))
    res = free_support_barycenter([a])
    assert res.barycenter == a
    assert res.objective_trace[-1] == 0.0


def test_barycenter_two_diracs():
    res = free_support_barycenter([um([0.0]), um([2.0])], support_size=1, init=um([0.5]))
    assert res.barycenter.points[0, 0] == pytest.approx(1.0)
    assert res.objective_trace[-1] == pytest.approx(2.0)


def test_barycenter_two_point_measures_vs_grid():
    A, B = um([0.0, 1.0]), um([2.0, 3.0])
    res = free_support_barycenter([A, B], support_size=2)
    got = np.sort(res.barycenter.points[:, 0])
    grid = np.round(np.arange(0, 3.0001, 0.01), 10)
    best, arg = np.inf, None
    for u in grid:
        for v in grid[grid >= u]:
            mu = um([u, v])
            val = w2_1d(mu, A)[0] + w2_1d(mu, B)[0]
            if val < best - 1e-15:
                best, arg = val, (u, v)
    assert np.allclose(got, arg, atol=1e-2)
    assert np.allclose(got, [1.0, 2.0])
    assert res.objective_trace[-1] == pytest.approx(best, abs=1e-9)


def test_barycenter_trace_monotone_and_identical_inputs():
    rng = np.random.default_rng(4)
    ms = [um(rng.normal(size=(15, 2)) + k) for k in range(3)]
    res = free_support_barycenter(ms, max_iter=30, init=3)
    tr = np.array(res.objective_trace)
    assert np.all(np.diff(tr) <= 1e-9)
    same = free_support_barycenter([ms[0], ms[0]])
    assert same.objective_trace[-1] <= 1e-12


def test_barycenter_empty_list():
    with pytest.raises(ValueError):
        free_support_barycenter([])

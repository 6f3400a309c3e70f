import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from swipt_tfs.core import (
    Allocation,
    ChannelGains,
    ProblemInstance,
    QosRequirements,
    SystemParams,
    check_feasibility,
    objective,
)
from swipt_tfs.oracle import (
    OracleConfig,
    OracleRefusal,
    grid_optimum,
    project_capped_simplex,
    project_weighted_cap,
    projected_gradient_optimum,
)

from conftest import small_instance


def _inst(g, R=None, E=None, P=1e-2):
    g = np.asarray(g, dtype=float)
    K, N = g.shape
    p = SystemParams(K, N, 1e6, 1e-21, P, 0.5)
    R = np.zeros(K) if R is None else R
    E = np.zeros(K) if E is None else E
    return ProblemInstance(p, QosRequirements(R, E), ChannelGains(g))


def test_single_slot_fills_budget():
    inst = _inst([[1e-9]])
    want = inst.params.rate_constant * math.log1p(1e-9 * 1e-2 / 1e-15)
    for res in (grid_optimum(inst), projected_gradient_optimum(inst)):
        assert res.feasible
        assert res.allocation.m[0, 0] == pytest.approx(1.0)
        assert res.allocation.q[0, 0] == pytest.approx(1e-2, rel=1e-6)
        assert res.objective == pytest.approx(want, rel=1e-9)


def test_symmetric_instance_is_swap_invariant():
    inst = _inst([[1e-9], [1e-9]], R=np.full(2, 1e5), E=np.full(2, 1e-12))
    swapped = _inst([[1e-9], [1e-9]], R=np.full(2, 1e5), E=np.full(2, 1e-12))
    a, b = grid_optimum(inst), grid_optimum(swapped)
    assert a.objective == pytest.approx(b.objective, rel=1e-12)
    m = a.allocation.m
    mirrored = type(a.allocation)(m[::-1], a.allocation.q[::-1])
    assert objective(inst, mirrored) == pytest.approx(a.objective, rel=1e-12)


def test_grid_refuses_large_instances():
    with pytest.raises(OracleRefusal):
        grid_optimum(small_instance(0, K=2, N=3))


def test_config_validation():
    with pytest.raises(ValueError):
        OracleConfig(grid_resolution=2)
    with pytest.raises(ValueError):
        OracleConfig(pg_step=0.0)
    with pytest.raises(ValueError):
        OracleConfig(pg_tol=-1.0)


def test_result_unpacks_as_pair():
    alloc, value = grid_optimum(_inst([[1e-9]]))
    assert alloc.m.shape == (1, 1) and value > 0


@pytest.mark.parametrize("seed", range(8))
def test_grid_and_projected_gradient_agree(seed):
    inst = small_instance(seed)
    grid, pg = grid_optimum(inst), projected_gradient_optimum(inst)
    assert grid.feasible == pg.feasible
    if not grid.feasible:
        return
    assert check_feasibility(inst, grid.allocation, 1e-9).feasible
    assert check_feasibility(inst, pg.allocation, 1e-9).feasible
    assert grid.objective == pytest.approx(pg.objective, rel=1e-5)


def test_grid_coarse_is_within_grid_gap():
    inst = small_instance(3)
    fine = projected_gradient_optimum(inst).objective
    coarse = grid_optimum(inst, OracleConfig(grid_resolution=5, refine_levels=0)).objective
    assert coarse <= fine * (1 + 1e-9)
    # an O(1/resolution) move in m costs at most that share of the rate
    assert coarse >= fine * (1 - 2.0 / 5)


def test_projected_gradient_flags_infeasible():
    inst = _inst([[1e-9, 1e-9], [1e-9, 1e-9]], E=np.array([1.0, 1.0]))
    res = projected_gradient_optimum(inst)
    assert not res.feasible and res.objective == -math.inf and res.message


def test_projected_gradient_rate_infeasible():
    inst = _inst([[1e-12, 1e-12], [1e-12, 1e-12]], R=np.array([1e9, 1e9]))
    res = projected_gradient_optimum(inst, OracleConfig(penalty_rounds=6, pg_iterations=500))
    assert not res.feasible


def test_projected_gradient_meets_active_targets():
    inst = small_instance(12, K=3, N=4, rate_frac=1.0, energy_frac=0.4)
    res = projected_gradient_optimum(inst)
    if res.feasible:
        rep = check_feasibility(inst, res.allocation, 1e-9)
        assert rep.feasible


vectors = st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=8)


@settings(max_examples=200, deadline=None)
@given(v=vectors, cap=st.floats(0.1, 3.0))
def test_capped_simplex_projection_is_optimal(v, cap):
    x = np.array(v)
    y = project_capped_simplex(x, cap)
    assert np.all(y >= 0) and y.sum() <= cap * (1 + 1e-12) + 1e-12
    assert np.allclose(project_capped_simplex(y, cap), y, atol=1e-12)
    # variational inequality against random points of the set
    rng = np.random.default_rng(len(v))
    for _ in range(20):
        z = rng.dirichlet(np.ones(x.size + 1))[:-1] * cap
        assert float((x - y) @ (z - y)) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(v=vectors, w=st.lists(st.floats(0.01, 100.0), min_size=8, max_size=8))
def test_weighted_projection_matches_generic_solver(v, w):
    x = np.array(v)
    d = np.array(w[: x.size])
    y = project_weighted_cap(x, d, 1.0)
    res = minimize(lambda z: float(d @ (z - x) ** 2), np.zeros_like(x), jac=lambda z: 2 * d * (z - x),
                   bounds=[(0, None)] * x.size, method="SLSQP",
                   constraints=[{"type": "ineq", "fun": lambda z: 1 - z.sum(), "jac": lambda z: -np.ones_like(z)}],
                   options={"ftol": 1e-15, "maxiter": 500})
    # SLSQP meets the cap only to its own tolerance, so compare relatively
    assert float(d @ (y - x) ** 2) <= res.fun * (1 + 1e-8) + 1e-8
    assert np.all(y >= 0) and y.sum() <= 1 + 1e-12


def test_projection_along_axis():
    x = np.array([[0.8, 0.1], [0.8, 0.2]])
    y = project_capped_simplex(x, 1.0, axis=0)
    assert np.allclose(y[:, 0], [0.5, 0.5])
    assert np.allclose(y[:, 1], [0.1, 0.2])


@pytest.mark.parametrize("seed", range(20))
def test_oracles_agree_on_loose_instances(seed):
    inst = small_instance(100 + seed, loose=True)
    grid, pg = grid_optimum(inst), projected_gradient_optimum(inst)
    assert grid.feasible and pg.feasible
    for res in (grid, pg):
        assert check_feasibility(inst, res.allocation, 1e-6).feasible
    # the refined grid gap is far below this; pg_tol is relative per step
    assert abs(grid.objective - pg.objective) <= 1e-6 * pg.objective


def test_projection_fixes_feasible_points():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = rng.dirichlet(np.ones(4), size=5).T[:3]
        assert np.allclose(project_capped_simplex(m, 1.0, axis=0), m, atol=1e-10, rtol=0)
        d = rng.uniform(0.1, 10, m.shape)
        assert np.allclose(project_weighted_cap(m, d, 1.0, axis=0), m, atol=1e-10, rtol=0)


@pytest.mark.parametrize("seed", range(5))
def test_objective_is_concave_on_segments(seed):
    inst = small_instance(seed, K=3, N=4)
    rng = np.random.default_rng(seed)
    P = inst.params.max_power

    def point():
        m = rng.dirichlet(np.ones(4), size=4).T[:3]
        q = rng.dirichlet(np.ones(12)).reshape(3, 4) * P
        return Allocation(m, q)

    for _ in range(20):
        a, b = point(), point()
        fa, fb = objective(inst, a), objective(inst, b)
        for t in np.linspace(0, 1, 11):
            mid = Allocation(t * a.m + (1 - t) * b.m, t * a.q + (1 - t) * b.q)
            chord = t * fa + (1 - t) * fb
            assert objective(inst, mid) >= chord - 1e-9 * max(abs(chord), 1.0)

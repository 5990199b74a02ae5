import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointsched.demand import BinomialMinislot, TruncatedParetoAggregate
from jointsched.model import Monomial, PiecewiseQuadratic, Threshold, check_joint_feasibility
from jointsched.solver import (
    SlotProblem,
    grid_oracle,
    project_feasible,
    project_simplex,
    solve_per_slot,
    solve_per_slot_pairs,
)
from jointsched.verify import random_slot_problem

vectors = st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=8).map(np.array)


@settings(max_examples=100, deadline=None)
@given(v=vectors, total=st.floats(0.01, 3.0))
def test_simplex_projection_is_optimal(v, total):
    p = project_simplex(v, total)
    assert np.all(p >= 0)
    assert p.sum() == pytest.approx(total, rel=1e-12)
    # variational inequality against every vertex of the scaled simplex
    for i in range(v.size):
        vertex = np.zeros_like(v)
        vertex[i] = total
        assert (v - p) @ (vertex - p) <= 1e-9 * (1 + np.abs(v).max())


def test_simplex_projection_batches_rows():
    rows = np.array([[3.0, 0.0, 0.0], [0.2, 0.3, 0.5], [1.0, 1.0, 1.0]])
    out = project_simplex(rows)
    assert np.allclose(out, [[1, 0, 0], [0.2, 0.3, 0.5], [1 / 3, 1 / 3, 1 / 3]])


def _grid_nearest(phi0, gamma0, delta, steps=1000):
    t = np.arange(steps + 1) / steps
    ph, ga = np.meshgrid(t, t, indexing="ij")
    ok = (1 - delta) * ga <= ph + 1e-12
    ok &= (1 - delta) * (1 - ga) <= (1 - ph) + 1e-12
    d2 = (ph - phi0[0]) ** 2 + (1 - ph - phi0[1]) ** 2 + (ga - gamma0[0]) ** 2 + (1 - ga - gamma0[1]) ** 2
    return np.sqrt(np.min(np.where(ok, d2, np.inf)))


@settings(max_examples=20, deadline=None)
@given(raw=st.lists(st.floats(-1, 2), min_size=4, max_size=4), delta=st.floats(0.05, 0.9))
def test_feasible_projection_matches_grid_nearest_point(raw, delta):
    phi0, gamma0 = np.array(raw[:2]), np.array(raw[2:])
    phi, gamma = project_feasible(phi0, gamma0, delta)
    assert check_joint_feasibility(phi, gamma, delta, tol=1e-8)
    dist = np.sqrt(np.sum((phi - phi0) ** 2) + np.sum((gamma - gamma0) ** 2))
    grid = _grid_nearest(phi0, gamma0, delta)
    assert dist <= grid + 1e-6
    assert dist >= grid - 2e-3


def test_documented_two_user_instance_matches_grid():
    prob = SlotProblem([1, 1], [10, 10], (Monomial(1, 2), PiecewiseQuadratic(0.7)), BinomialMinislot(0.5, 0.3), 0.3)
    res = solve_per_slot(prob)
    _, _, best = grid_oracle(prob, 0.01)
    assert check_joint_feasibility(res.phi, res.gamma, 0.3)
    assert res.objective >= best - 1e-3


def test_single_user_takes_everything():
    prob = SlotProblem([1.0], [4.0], (Monomial(1, 2),), BinomialMinislot(0.5, 0.3), 0.3)
    res = solve_per_slot(prob)
    assert res.phi.tolist() == [1.0] and res.gamma.tolist() == [1.0]


def test_objective_history_is_monotone():
    prob = SlotProblem([1, 2, 0.5], [4, 3, 9], (Monomial(1, 2),) * 3, BinomialMinislot(0.4, 0.3), 0.3)
    res = solve_per_slot(prob, record=True)
    assert np.all(np.diff(res.history) >= -1e-12)


def test_identical_users_split_evenly_at_optimum():
    prob = SlotProblem([1, 1], [5, 5], (Monomial(1, 2),) * 2, BinomialMinislot(0.5, 0.3), 0.3)
    res = solve_per_slot(prob)
    even = prob.objective(np.array([0.5, 0.5]), np.array([0.5, 0.5]))
    assert res.objective == pytest.approx(even, abs=1e-9)


@pytest.mark.parametrize("seed", range(12))
def test_pair_solver_never_worse_than_gradient_or_grid(seed):
    rng = np.random.default_rng(100 + seed)
    prob = random_slot_problem(rng, users=2 + seed % 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pg = solve_per_slot(prob)
    pair = solve_per_slot_pairs(prob)
    assert check_joint_feasibility(pair.phi, pair.gamma, prob.delta)
    assert pair.objective >= pg.objective - 1e-5 * max(1.0, abs(pg.objective))
    if prob.num_users == 2:
        assert pair.objective >= grid_oracle(prob, 0.01)[2] - 1e-5


def test_pair_solver_uses_at_most_two_users():
    prob = SlotProblem(np.ones(6), np.arange(1, 7), (Monomial(1, 2),) * 6, BinomialMinislot(0.5, 0.3), 0.3)
    res = solve_per_slot_pairs(prob)
    assert np.count_nonzero(res.phi > 1e-12) <= 2


def test_non_homogeneous_threshold_falls_back_to_gradient():
    law = TruncatedParetoAggregate(2.0, 0.1, 0.05, 0.9)
    prob = SlotProblem([1, 1], [3, 4], (Threshold(0.5, 0.5),) * 2, law, 0.1)
    res = solve_per_slot_pairs(prob)
    assert check_joint_feasibility(res.phi, res.gamma, 0.1)


@pytest.mark.parametrize("seed", range(6))
def test_three_user_grid_never_beats_solver(seed):
    rng = np.random.default_rng(seed)
    prob = random_slot_problem(rng, users=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = solve_per_slot(prob)
    assert res.objective >= grid_oracle(prob, 0.05)[2] - 1e-6


def test_grid_oracle_rejects_large_problems():
    prob = SlotProblem(np.ones(4), np.ones(4), (Monomial(),) * 4, BinomialMinislot(0.5, 0.3), 0.3)
    with pytest.raises(ValueError):
        grid_oracle(prob, 0.1)


def test_grid_points_are_feasible():
    prob = SlotProblem([1, 1], [2, 7], (Monomial(1, 2), Monomial(1, 1)), BinomialMinislot(0.3, 0.4), 0.4)
    phi, gamma, _ = grid_oracle(prob, 0.02)
    assert check_joint_feasibility(phi, gamma, 0.4)
    for a, b in itertools.combinations([phi, gamma], 2):
        assert a.shape == b.shape

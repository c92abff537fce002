import math

import numpy as np
import pytest
from conftest import I2, pair, robot
from hypothesis import given, settings
from hypothesis import strategies as st

from clmrmp.chance import (CL, OBSTACLE, ROBOT_ROBOT, BudgetError, GoalRegion, Obstacle, ObstacleField,
                           ProbabilityBudget, Validator, check_ext_enabled, check_goal, check_obstacles,
                           check_robot_robot, valid_belief)
from clmrmp.montecarlo import mc_probability
from clmrmp.propagation import ExpectedBelief
from clmrmp.team import compose

R05 = math.sqrt(-2 * math.log(0.05) * 0.01)  # contour radius of 0.01 I at tail 0.05


def test_budget_identity_enforced():
    ProbabilityBudget(0.85, 0.05, 0.05, 0.05)
    with pytest.raises(BudgetError):
        ProbabilityBudget(0.9, 0.05, 0.05, 0.05)
    with pytest.raises(BudgetError):
        ProbabilityBudget(1.1, -0.05, 0.0, -0.05)


def test_per_pair_division():
    b = ProbabilityBudget(0.85, 0.05, 0.05, 0.05)
    assert b.per_pair(2) == (0.05, 0.05)
    assert b.per_pair(3) == (0.025, 0.025)
    assert b.per_pair(3, divide=False) == (0.05, 0.05)


def test_obstacle_check_margin():
    rect = Obstacle.rect((1.0, -1.0), (2.0, 1.0))
    # mean 0.3 from the edge: needs 0.2448 + 0.1 = 0.3448 > 0.3
    assert not check_obstacles(np.array([0.7, 0.0]), 0.01 * I2, 0.1, [rect], 0.05)
    assert check_obstacles(np.array([0.6, 0.0]), 0.01 * I2, 0.1, [rect], 0.05)
    assert 1.0 - 0.6 > R05 + 0.1 > 1.0 - 0.7


def test_obstacle_disc_and_walls():
    disc = Obstacle.disc((5.0, 5.0), 1.0)
    zero = np.zeros((2, 2))
    assert not check_obstacles(np.array([6.05, 5.0]), zero, 0.1, [disc], 0.05)
    assert check_obstacles(np.array([6.15, 5.0]), zero, 0.1, [disc], 0.05)
    bounds = ((0.0, 0.0), (10.0, 10.0))
    assert not check_obstacles(np.array([0.05, 5.0]), zero, 0.1, [], 0.05, bounds)
    assert check_obstacles(np.array([0.15, 5.0]), zero, 0.1, [], 0.05, bounds)


@settings(max_examples=200, deadline=None)
@given(st.floats(-2, 12), st.floats(-2, 12))
def test_vectorized_clearance_matches_scalar(x, y):
    field = ObstacleField([Obstacle.rect((2, 2), (3, 4)), Obstacle.disc((7, 7), 1.5)], ((0, 0), (10, 10)))
    p = np.array([x, y])
    assert field.clearance_many(p[None, :])[0] == pytest.approx(field.clearance(p), abs=1e-12)


def test_robot_robot_example():
    assert check_robot_robot(np.array([1.0, 0.0]), 0.01 * I2, 0.1, 0.1, 0.05)
    assert 1.0 - R05 == pytest.approx(0.75522, abs=1e-5)
    assert not check_robot_robot(np.array([0.15, 0.0]), np.zeros((2, 2)), 0.1, 0.1, 0.05)


def test_ext_enabled_examples():
    assert check_ext_enabled(np.array([0.2, 0.0]), 0.01 * I2, 0.5, 0.05)
    assert check_ext_enabled(np.array([0.49, 0.0]), np.zeros((2, 2)), 0.5, 0.05)
    assert not check_ext_enabled(np.array([0.4, 0.0]), 0.01 * I2, 0.5, 0.05)


def test_goal_example():
    goal = GoalRegion((0.0, 0.0), 0.3)
    assert math.sqrt(-2 * math.log(0.15) * 0.01) == pytest.approx(0.19479, abs=1e-5)
    assert check_goal(np.array([0.1, 0.0]), 0.01 * I2, goal, 0.85)
    assert not check_goal(np.array([0.0, 0.0]), 0.01 * I2, GoalRegion((0, 0), 0.15), 0.85)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.3), st.floats(1e-4, 0.02), st.floats(0.2, 0.6))
def test_goal_soundness_monte_carlo(dist, var, radius):
    mean = np.array([dist, 0.0])
    goal = GoalRegion((0.0, 0.0), radius)
    if not check_goal(mean, var * I2, goal, 0.85):
        return
    est, se = mc_probability(mean, var * I2, lambda x: np.linalg.norm(x, axis=1) <= radius, 20_000,
                             np.random.default_rng(0))
    assert est >= 0.85 - 3 * math.sqrt(0.85 * 0.15 / 20_000)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.floats(1e-4, 0.25), st.floats(0.1, 1.0))
def test_shrinking_covariance_never_flips_to_false(mx, my, var, shrink):
    mean = np.array([mx, my])
    big, small = var * I2, shrink * var * I2
    if check_robot_robot(mean, big, 0.1, 0.1, 0.05):
        assert check_robot_robot(mean, small, 0.1, 0.1, 0.05)
    if check_ext_enabled(mean, big, 1.5, 0.05):
        assert check_ext_enabled(mean, small, 1.5, 0.05)
    rect = [Obstacle.rect((1.0, 1.0), (2.0, 2.0))]
    if check_obstacles(mean, big, 0.1, rect, 0.05):
        assert check_obstacles(mean, small, 0.1, rect, 0.05)


def test_validator_causes():
    model = compose([robot(True), robot(False)], [pair(r_ext=0.5)])
    v = Validator(model, [Obstacle.rect((4, 4), (6, 6))], ((0, 0), (10, 10)), ProbabilityBudget(0.85, 0.05, 0.05, 0.05))
    G = 0.001 * np.eye(4)
    assert v.failure(np.array([1.0, 1.0, 1.4, 1.0]), G) is None
    assert v.failure(np.array([4.5, 4.5, 1.0, 1.0]), G) == OBSTACLE
    assert v.failure(np.array([1.0, 1.0, 1.1, 1.0]), G) == ROBOT_ROBOT
    far = np.array([1.0, 1.0, 3.0, 1.0])
    assert v.failure(far, G) is None
    assert v.failure(far, G, scheduled=[0]) == CL


def test_valid_belief_root_and_schedule():
    model = compose([robot(True), robot(False)], [pair(r_ext=0.5)])
    budget = ProbabilityBudget(0.85, 0.05, 0.05, 0.05)
    b = ExpectedBelief.root(np.array([1.0, 1.0, 3.0, 1.0]), 0.0025 * np.eye(4))
    assert valid_belief(b, model, [], ((0, 0), (10, 10)), budget)
    assert not valid_belief(b, model, [], ((0, 0), (10, 10)), budget, scheduled=[0])

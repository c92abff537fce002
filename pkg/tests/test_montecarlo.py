import math

import numpy as np
import pytest
from conftest import I2, make_env

from clmrmp.chance import Validator
from clmrmp.montecarlo import closed_loop, execute_plan, mc_probability, pair_sensors
from clmrmp.planners import MotionPlan, PlannerConfig, plan
from clmrmp.propagation import GainSet, step_arrays
from clmrmp.team import MeasurementSchedule, assemble_measurement


def disc_event(radius):
    return lambda x: np.linalg.norm(x, axis=1) <= radius


def test_mc_probability_examples():
    rng = np.random.default_rng(0)
    p, se = mc_probability([0.0, 0.0], 0.01 * I2, disc_event(10.0), 10_000, rng)
    assert p == 1.0 and se == 0.0
    # 95% contour of 0.01 I
    r = math.sqrt(-2 * math.log(0.05) * 0.01)
    p, se = mc_probability([0.0, 0.0], 0.01 * I2, disc_event(r), 100_000, rng)
    assert abs(p - 0.95) <= 3 * math.sqrt(0.95 * 0.05 / 100_000)
    p, _ = mc_probability([0.5, 0.0], np.zeros((2, 2)), disc_event(0.6), 1000, rng)
    assert p == 1.0


def test_mc_probability_sample_floor():
    with pytest.raises(ValueError):
        mc_probability([0.0, 0.0], I2, disc_event(1.0), 999, np.random.default_rng(0))


def test_mc_probability_seeded():
    a = mc_probability([0.0, 0.0], I2, disc_event(1.0), 5000, np.random.default_rng(4))
    b = mc_probability([0.0, 0.0], I2, disc_event(1.0), 5000, np.random.default_rng(4))
    assert a == b


def test_noise_free_rollouts_follow_nominal():
    A = B = np.eye(2)
    K = 0.6 * np.eye(2)
    U = np.tile([0.1, -0.2], (5, 1))
    nominal = np.cumsum(np.vstack([[1.0, 1.0], U]), axis=0)
    trace = closed_loop(A, B, np.zeros((2, 2)), K, nominal[0], np.zeros((2, 2)), U, nominal, 50,
                        np.random.default_rng(0))
    np.testing.assert_allclose(trace.states, np.broadcast_to(nominal, trace.states.shape), atol=1e-12)
    assert not trace.excluded.any()


def test_closed_loop_spread_matches_expected_belief():
    """Spread of true states around the nominal matches Gamma with a pair measurement."""
    env = make_env([(2.0, 2.0), (3.0, 2.0)], [(8.0, 8.0), (9.0, 8.0)], r_ext=100.0)
    model = env.model
    K = GainSet.lqr(model).K
    F = model.A - model.B @ K
    T = 15
    U = np.tile([0.2, 0.1, 0.2, 0.1], (T, 1))
    sched = [frozenset({0})] * T
    mean, sigma, lam = env.start_mean, env.start_cov, np.zeros((4, 4))
    nominal, gammas = [mean], [sigma]
    for k in range(T):
        C, R = assemble_measurement(model, sched[k])
        mean, sigma, lam = step_arrays(model.A, model.B, model.Q, F, mean, sigma, lam, U[k], C, R)
        nominal.append(mean)
        gammas.append(sigma + lam)
    trace = closed_loop(model.A, model.B, model.Q, K, env.start_mean, env.start_cov, U, np.array(nominal),
                        20_000, np.random.default_rng(1), model.C_prop, model.R_prop, pair_sensors(model), sched)
    for k in (5, 10, 15):
        dev = trace.states[:, k] - nominal[k]
        emp = dev.T @ dev / dev.shape[0]
        assert np.linalg.norm(emp - gammas[k]) / np.linalg.norm(gammas[k]) < 0.1
    assert not trace.cl_failures.any()


def test_unavailable_pair_is_flagged():
    env = make_env([(2.0, 2.0), (6.0, 2.0)], [(8.0, 8.0), (9.0, 8.0)], r_ext=1.0)
    model = env.model
    K = GainSet.lqr(model).K
    U = np.zeros((3, 4))
    nominal = np.tile(env.start_mean, (4, 1))
    trace = closed_loop(model.A, model.B, model.Q, K, env.start_mean, env.start_cov, U, nominal, 200,
                        np.random.default_rng(0), model.C_prop, model.R_prop, pair_sensors(model),
                        [frozenset({0}), frozenset(), frozenset({0})])
    assert trace.cl_failures[:, 0].all() and trace.cl_failures[:, 2].all()
    assert not trace.cl_failures[:, 1].any()


def test_schedule_length_checked():
    with pytest.raises(ValueError):
        closed_loop(np.eye(2), np.eye(2), np.eye(2), np.eye(2), np.zeros(2), np.eye(2), np.zeros((3, 2)),
                    np.zeros((4, 2)), 10, np.random.default_rng(0), schedule=[frozenset()])


@pytest.fixture(scope="module")
def short_plan():
    env = make_env([(3.0, 3.0), (4.0, 3.0)], [(3.55, 3.0), (4.55, 3.0)], goal_radius=0.6)
    return env, plan(env, PlannerConfig(goal_bias=0.5, max_iterations=50)).plan


def test_execute_plan_within_budget_and_seeded(short_plan):
    env, mp = short_plan
    a = execute_plan(env, mp, 10_000, seed=3)
    b = execute_plan(env, mp, 10_000, seed=3)
    assert a.to_dict() == b.to_dict()
    np.testing.assert_array_equal(a.obstacle, b.obstacle)
    v = Validator(env.model, env.obstacles, env.bounds, env.budget)
    assert all(a.within_budget(env.budget, v.p_rob_pair, v.p_ncl_pair).values())
    assert a.obstacle.shape == (mp.T + 1, 2) and a.cl.shape == (mp.T, 1)
    assert a.kept == 10_000


def test_no_schedule_no_cl_failures(short_plan):
    env, mp = short_plan
    silent = MotionPlan(mp.controls, mp.states, MeasurementSchedule([()] * mp.T), mp.gammas)
    rep = execute_plan(env, silent, 2000, seed=0)
    assert rep.max_rates()["cl"] == 0.0


def test_report_margin():
    env = make_env([(3.0, 3.0), (4.0, 3.0)], [(3.0, 3.0), (4.0, 3.0)])
    rep = execute_plan(env, plan(env, PlannerConfig()).plan, 10_000, seed=0)
    assert rep.margin(0.05) == pytest.approx(0.05 + 3 * math.sqrt(0.05 * 0.95 / 10_000))
    assert rep.goal > 0.99

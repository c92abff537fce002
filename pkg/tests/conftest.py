import sys

import numpy as np
import pytest

from clmrmp.chance import GoalRegion, Obstacle, ProbabilityBudget
from clmrmp.environment import Environment
from clmrmp.gaussian import GaussianBelief
from clmrmp.team import ExteroPair, RobotModel, compose

I2 = np.eye(2)
BUDGET = ProbabilityBudget(0.85, 0.05, 0.05, 0.05)


def robot(prop=False, q=0.01, r=0.01, **kw):
    if prop:
        return RobotModel(I2, I2, q * I2, C_prop=I2, R_prop=r * I2, **kw)
    return RobotModel(I2, I2, q * I2, **kw)


def pair(i=0, j=1, r_ext=1.5, noise=0.01):
    return ExteroPair(i, j, np.hstack([I2, -I2]), noise * I2, r_ext)


def make_env(starts, goals, obstacles=(), props=None, r_ext=1.5, goal_radius=0.5,
             sigma0=0.0025, with_pairs=True, budget=BUDGET, name="test"):
    n = len(starts)
    props = props if props is not None else [i % 2 == 0 for i in range(n)]
    robots = tuple(robot(p) for p in props)
    pairs = tuple(pair(i, j, r_ext) for i in range(n) for j in range(i + 1, n)) if with_pairs else ()
    return Environment(
        name=name, bounds=((0.0, 0.0), (10.0, 10.0)), obstacles=tuple(obstacles), robots=robots,
        starts=tuple(GaussianBelief(s, sigma0 * I2) for s in starts),
        goals=tuple(GoalRegion(g, goal_radius) for g in goals), pairs=pairs, budget=budget,
    )


@pytest.fixture
def two_robot_model():
    return compose([robot(True), robot(False)], [pair()])


@pytest.fixture
def trivial_env():
    # goals one short step away; no obstacles
    return make_env([(3.0, 3.0), (4.0, 3.0)], [(3.3, 3.0), (4.3, 3.0)], goal_radius=0.5)


@pytest.fixture
def rect():
    return Obstacle.rect((4.0, 4.0), (6.0, 6.0))


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.summary_lines():
        terminalreporter.write_line(line)

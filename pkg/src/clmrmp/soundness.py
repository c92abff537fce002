"""Monte-Carlo soundness checks for the robot-robot and availability tests.

Each case draws a random 2-D difference belief and a threshold. Whenever
the conservative check accepts, the true event probability is estimated by
sampling and compared with the threshold plus three binomial standard
errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chance import check_ext_enabled, check_robot_robot
from .montecarlo import mc_probability

P_LEVELS = (0.01, 0.05, 0.1)
EIG_RANGE = (1e-4, 0.25)
MEAN_RANGE = (0.0, 3.0)


@dataclass
class SoundnessReport:
    name: str
    cases: int
    accepted: int = 0
    violations: list = field(default_factory=list)  # (case, estimate, bound)
    worst_slack: float = math.inf  # min over accepted cases of bound - estimate

    @property
    def ok(self) -> bool:
        return not self.violations


def random_difference(rng: np.random.Generator) -> tuple:
    mean = rng.uniform(*MEAN_RANGE, size=2)
    eig = rng.uniform(*EIG_RANGE, size=2)
    theta = rng.uniform(0.0, math.pi)
    c, s = math.cos(theta), math.sin(theta)
    R = np.array([[c, -s], [s, c]])
    return mean, R @ np.diag(eig) @ R.T


def _bound(p: float, samples: int) -> float:
    return p + 3.0 * math.sqrt(p * (1.0 - p) / samples)


def robot_robot_suite(cases: int = 500, samples: int = 100_000, seed: int = 0) -> SoundnessReport:
    """Accepted cases must keep ``P(|x| <= r_i + r_j)`` within the bound."""
    rng = np.random.default_rng(seed)
    rep = SoundnessReport("robot_robot", cases)
    for k in range(cases):
        mean, cov = random_difference(rng)
        p = float(rng.choice(P_LEVELS))
        r_i, r_j = rng.uniform(0.05, 0.5, size=2)
        if not check_robot_robot(mean, cov, r_i, r_j, p):
            continue
        rep.accepted += 1
        rsum = r_i + r_j
        est, _ = mc_probability(mean, cov, lambda x: np.einsum("ij,ij->i", x, x) <= rsum * rsum, samples, rng)
        bound = _bound(p, samples)
        rep.worst_slack = min(rep.worst_slack, bound - est)
        if est > bound:
            rep.violations.append((k, est, bound))
    return rep


def availability_suite(cases: int = 500, samples: int = 100_000, seed: int = 1) -> SoundnessReport:
    """Accepted cases must keep ``P(|x| > r_ext)`` within the bound."""
    rng = np.random.default_rng(seed)
    rep = SoundnessReport("cl", cases)
    for k in range(cases):
        mean, cov = random_difference(rng)
        p = float(rng.choice(P_LEVELS))
        r_ext = float(rng.uniform(0.5, 6.0))
        if not check_ext_enabled(mean, cov, r_ext, p):
            continue
        rep.accepted += 1
        est, _ = mc_probability(mean, cov, lambda x: np.einsum("ij,ij->i", x, x) > r_ext * r_ext, samples, rng)
        bound = _bound(p, samples)
        rep.worst_slack = min(rep.worst_slack, bound - est)
        if est > bound:
            rep.violations.append((k, est, bound))
    return rep

"""Conservative chance-constraint checks built on probability contours.

Every check inflates a mean by a sphere that bounds the relevant Gaussian
probability ellipse, so a ``True`` answer implies the probabilistic
constraint holds; ``False`` may be spurious.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .gaussian import contour_radius, difference_cov

BUDGET_TOL = 1e-12

OBSTACLE = "obstacle"
ROBOT_ROBOT = "robot_robot"
CL = "cl"
NUMERIC = "numeric"
CAUSES = (OBSTACLE, ROBOT_ROBOT, CL, NUMERIC)


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class ProbabilityBudget:
    p_safe: float
    p_obs: float
    p_rob: float
    p_ncl: float

    def __post_init__(self):
        for name in ("p_safe", "p_obs", "p_rob", "p_ncl"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise BudgetError(f"{name}={v} is not a probability")
        total = self.p_obs + self.p_rob + self.p_ncl
        if abs(total - (1.0 - self.p_safe)) > BUDGET_TOL:
            raise BudgetError(
                f"p_obs + p_rob + p_ncl = {total!r} but 1 - p_safe = {1.0 - self.p_safe!r}"
            )

    @classmethod
    def split_evenly(cls, p_each: float) -> "ProbabilityBudget":
        return cls(1.0 - 3.0 * p_each, p_each, p_each, p_each)

    def per_pair(self, n_robots: int, divide: bool = True) -> tuple:
        """Thresholds ``(p_rob, p_ncl)`` applied to each individual pair."""
        if divide and n_robots > 2:
            return self.p_rob / (n_robots - 1), self.p_ncl / (n_robots - 1)
        return self.p_rob, self.p_ncl


@dataclass(frozen=True)
class Obstacle:
    kind: str  # "rect" or "disc"
    lower: Optional[tuple] = None
    upper: Optional[tuple] = None
    center: Optional[tuple] = None
    radius: Optional[float] = None

    def __post_init__(self):
        if self.kind == "rect":
            lo = tuple(float(v) for v in self.lower)
            hi = tuple(float(v) for v in self.upper)
            if len(lo) != len(hi) or any(h <= l for l, h in zip(lo, hi)):
                raise ValueError(f"rectangle {lo}-{hi} has empty interior")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        elif self.kind == "disc":
            object.__setattr__(self, "center", tuple(float(v) for v in self.center))
            if self.radius is None or self.radius <= 0:
                raise ValueError("disc obstacle needs a positive radius")
            object.__setattr__(self, "radius", float(self.radius))
        else:
            raise ValueError(f"unknown obstacle kind {self.kind!r}")

    @classmethod
    def rect(cls, lower, upper) -> "Obstacle":
        return cls("rect", lower=tuple(lower), upper=tuple(upper))

    @classmethod
    def disc(cls, center, radius) -> "Obstacle":
        return cls("disc", center=tuple(center), radius=radius)

    def distance(self, p: np.ndarray) -> float:
        """Euclidean distance from ``p`` to the obstacle (0 inside)."""
        if self.kind == "rect":
            q = np.clip(p, self.lower, self.upper)
            return float(np.linalg.norm(p - q))
        return max(float(np.linalg.norm(p - np.asarray(self.center))) - self.radius, 0.0)


@dataclass(frozen=True)
class GoalRegion:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if self.radius <= 0:
            raise ValueError("goal radius must be positive")


class ObstacleField:
    """Vectorized clearance queries over a fixed obstacle list and workspace box."""

    def __init__(self, obstacles: Sequence[Obstacle], bounds: Optional[tuple] = None):
        self.obstacles = tuple(obstacles)
        rects = [o for o in self.obstacles if o.kind == "rect"]
        discs = [o for o in self.obstacles if o.kind == "disc"]
        self._lo = np.array([o.lower for o in rects], dtype=float)
        self._hi = np.array([o.upper for o in rects], dtype=float)
        self._dc = np.array([o.center for o in discs], dtype=float)
        self._dr = np.array([o.radius for o in discs], dtype=float)
        self.bounds = None if bounds is None else (np.asarray(bounds[0], float), np.asarray(bounds[1], float))

    def clearance(self, p: np.ndarray) -> float:
        """Distance from ``p`` to the nearest obstacle or workspace wall."""
        best = math.inf
        if self._lo.shape[0]:
            q = np.minimum(np.maximum(p, self._lo), self._hi)
            best = float(np.sqrt(np.min(np.sum((p - q) ** 2, axis=1))))
        if self._dr.size:
            d = np.sqrt(np.sum((self._dc - p) ** 2, axis=1)) - self._dr
            best = min(best, max(float(np.min(d)), 0.0))
        if self.bounds is not None:
            lo, hi = self.bounds
            best = min(best, float(np.min(p - lo)), float(np.min(hi - p)))
        return best

    def clearance_many(self, P: np.ndarray) -> np.ndarray:
        """Row-wise :meth:`clearance` for an (M, w) array of points."""
        P = np.asarray(P, dtype=float)
        best = np.full(P.shape[0], math.inf)
        if self._lo.shape[0]:
            q = np.minimum(np.maximum(P[:, None, :], self._lo), self._hi)
            best = np.sqrt(np.min(np.sum((P[:, None, :] - q) ** 2, axis=-1), axis=1))
        if self._dr.size:
            d = np.sqrt(np.sum((P[:, None, :] - self._dc) ** 2, axis=-1)) - self._dr
            best = np.minimum(best, np.maximum(np.min(d, axis=1), 0.0))
        if self.bounds is not None:
            lo, hi = self.bounds
            best = np.minimum(best, np.minimum(np.min(P - lo, axis=1), np.min(hi - P, axis=1)))
        return best

    def disc_free(self, p: np.ndarray, radius: float) -> bool:
        return self.clearance(p) > radius


def _as_field(obstacles, bounds=None) -> ObstacleField:
    if isinstance(obstacles, ObstacleField):
        return obstacles
    return ObstacleField(list(obstacles), bounds)


def check_obstacles(mean, cov, body_radius: float, obstacles, p_obs: float, bounds=None) -> bool:
    """True iff the contour sphere inflated by the body radius avoids every obstacle.

    ``obstacles`` is a sequence of :class:`Obstacle` or a prebuilt
    :class:`ObstacleField`; workspace ``bounds`` count as walls.
    """
    rho = contour_radius(cov, p_obs) + body_radius
    return _as_field(obstacles, bounds).disc_free(np.asarray(mean, float), rho)


def check_robot_robot(diff_mean, diff_cov, r_i: float, r_j: float, p_rob: float) -> bool:
    dist = float(np.linalg.norm(diff_mean))
    return dist - contour_radius(diff_cov, p_rob) > r_i + r_j


def check_ext_enabled(diff_mean, diff_cov, r_ext: float, p_ncl: float) -> bool:
    dist = float(np.linalg.norm(diff_mean))
    return dist + contour_radius(diff_cov, p_ncl) < r_ext


def check_goal(mean, cov, goal: GoalRegion, p_safe: float) -> bool:
    # the sphere must contain p_safe mass, so its tail is 1 - p_safe
    dist = float(np.linalg.norm(np.asarray(mean, float) - np.asarray(goal.center)))
    if p_safe <= 0.0:
        return dist <= goal.radius
    return dist + contour_radius(cov, 1.0 - p_safe) <= goal.radius


class Validator:
    """Bundles a team model, scene and budget for repeated node checks."""

    def __init__(self, model, obstacles, bounds, budget: ProbabilityBudget, divide_pair_budget: bool = True):
        self.model = model
        self.field = _as_field(obstacles, bounds)
        self.budget = budget
        self.p_rob_pair, self.p_ncl_pair = budget.per_pair(model.n_robots, divide_pair_budget)
        n = model.n_robots
        self.robot_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]

    def ws_block(self, X, G, i):
        idx = self.model.ws_index[i]
        return X[idx], G[np.ix_(idx, idx)]

    def diff(self, X, G, i, j):
        ii, jj = self.model.ws_index[i], self.model.ws_index[j]
        return X[ii] - X[jj], difference_cov(G, ii, jj)

    def ext_enabled(self, X, G, pair: int) -> bool:
        p = self.model.pairs[pair]
        dm, dc = self.diff(X, G, p.i, p.j)
        return check_ext_enabled(dm, dc, p.r_ext, self.p_ncl_pair)

    def enabled_pairs(self, X, G) -> frozenset:
        return frozenset(k for k in range(len(self.model.pairs)) if self.ext_enabled(X, G, k))

    def failure(self, X, G, scheduled: Iterable[int] = ()) -> Optional[str]:
        """Name of the first violated constraint family, or None if valid."""
        robots = self.model.robots
        for i, r in enumerate(robots):
            m, c = self.ws_block(X, G, i)
            if not check_obstacles(m, c, r.body_radius, self.field, self.budget.p_obs):
                return OBSTACLE
        for i, j in self.robot_pairs:
            dm, dc = self.diff(X, G, i, j)
            if not check_robot_robot(dm, dc, robots[i].body_radius, robots[j].body_radius, self.p_rob_pair):
                return ROBOT_ROBOT
        for k in scheduled:
            if not self.ext_enabled(X, G, k):
                return CL
        return None

    def valid(self, X, G, scheduled: Iterable[int] = ()) -> bool:
        return self.failure(X, G, scheduled) is None

    def at_goal(self, X, G, goals: Sequence[GoalRegion]) -> bool:
        for i, goal in enumerate(goals):
            m, c = self.ws_block(X, G, i)
            if not check_goal(m, c, goal, self.budget.p_safe):
                return False
        return True


def valid_belief(belief, model, obstacles, bounds, budget: ProbabilityBudget,
                 scheduled: Iterable[int] = (), divide_pair_budget: bool = True) -> bool:
    """Node-level check of the safety chance constraint under the budget split."""
    v = Validator(model, obstacles, bounds, budget, divide_pair_budget)
    return v.valid(belief.mean, belief.gamma, scheduled)

"""Belief-RRT and Belief-EST over the composed expected belief."""
from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import block_diag

from .biasing import (BiasState, biased_pdf_sample, clone_sample, distance_weight, rebranch,
                      weighted_choice)
from .chance import CAUSES, Validator
from .gaussian import NumericError
from .propagation import ExpectedBelief, GainSet, propagate_edge
from .team import MeasurementSchedule, TeamModel, compose
from .tree import BeliefNode, BeliefTree, SearchContext, advance

PLANNERS = ("rrt", "est")
BIASES = ("none", "clone", "weight", "rebranch")
COMPATIBLE = {"rrt": ("none", "clone", "rebranch"), "est": ("none", "weight", "rebranch")}


class SetupError(ValueError):
    pass


class ConsistencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    planner: str = "rrt"
    bias: str = "none"
    epsilon: float = 0.0
    goal_bias: float = 0.05
    max_iterations: int = 100_000
    time_budget: Optional[float] = None
    edge_steps: int = 5
    seed: int = 0
    est_radius: Optional[float] = None
    cov_weight: float = 0.0  # weight on trace(Gamma) added to squared distance in RRT nearest queries
    divide_pair_budget: bool = True
    use_extero: bool = True

    def __post_init__(self):
        if self.planner not in PLANNERS:
            raise ValueError(f"unknown planner {self.planner!r}")
        if self.bias not in BIASES:
            raise ValueError(f"unknown bias {self.bias!r}")
        if self.bias not in COMPATIBLE[self.planner]:
            raise ValueError(f"bias {self.bias!r} does not apply to {self.planner.upper()}")
        for name in ("epsilon", "goal_bias"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.bias == "clone" and self.epsilon + self.goal_bias > 1.0:
            raise ValueError("epsilon + goal_bias must not exceed 1 with cloning")
        if self.edge_steps < 1:
            raise ValueError("edge_steps must be at least 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")

    @property
    def label(self) -> str:
        return f"{self.planner}-{self.bias}-{self.epsilon:g}"


@dataclass(frozen=True)
class MotionPlan:
    controls: tuple  # per robot, (T, m_i)
    states: tuple  # per robot, (T + 1, n_i)
    schedule: MeasurementSchedule
    gammas: Optional[np.ndarray] = field(default=None, repr=False)  # (T + 1, n, n)

    @property
    def T(self) -> int:
        return len(self.schedule)

    def composed_controls(self) -> np.ndarray:
        return np.hstack(self.controls) if self.T else np.zeros((0, sum(u.shape[1] for u in self.controls)))

    def composed_states(self) -> np.ndarray:
        return np.hstack(self.states)

    def replay_error(self, model: TeamModel) -> float:
        err = 0.0
        for r, u, x in zip(model.robots, self.controls, self.states):
            pred = x[:-1] @ r.A.T + u @ r.B.T
            if pred.size:
                err = max(err, float(np.max(np.abs(pred - x[1:]))))
        return err


@dataclass
class PlanResult:
    success: bool
    plan: Optional[MotionPlan]
    iterations: int
    tree_size: int
    evaluations: int
    rejections: Counter
    rebranch_attempts: int = 0
    rebranch_successes: int = 0
    elapsed: float = 0.0
    tree: Optional[BeliefTree] = field(default=None, repr=False)

    def rejection_rates(self) -> dict:
        n = max(self.evaluations, 1)
        return {c: self.rejections.get(c, 0) / n for c in CAUSES}


class Planner:
    """One planning query: owns its tree, RNG and bias state."""

    def __init__(self, env, config: PlannerConfig, gains: Optional[GainSet] = None):
        self.env = env
        self.config = config
        model = env.model if config.use_extero else compose(env.model.robots, ())
        self.model = model
        self.gains = gains or GainSet.lqr(model, env.lqr_q, env.lqr_r)
        validator = Validator(model, env.obstacles, env.bounds, env.budget, config.divide_pair_budget)
        self.ctx = SearchContext(model, validator, self.gains.K, env.goals)
        self.rng = np.random.default_rng(config.seed)
        self.bias = BiasState(model.n_robots)
        lo, hi = (np.asarray(b, float) for b in env.bounds)
        self.lo, self.hi = lo, hi
        est_radius = config.est_radius
        if est_radius is None:
            est_radius = 0.1 * float(np.linalg.norm(hi - lo))
        root = ExpectedBelief.root(env.start_mean, env.start_cov)
        weight_fn = (lambda ws: distance_weight(ws, self.bias.weight_cap)) if config.bias == "weight" else None
        self.tree = BeliefTree(model, root, est_radius, weight_fn)
        # per-robot pseudo-inverse of the workspace rows of B, for steering
        self._steer = block_diag(*[np.linalg.pinv(r.B[list(r.workspace_proj), :]) for r in model.robots])
        self._ws_all = np.concatenate(model.ws_index)
        self._u_max = np.concatenate([np.full(r.m, r.u_max) for r in model.robots])
        self.rejections = Counter()
        self.evaluations = 0

    # -- sampling -------------------------------------------------------
    def uniform_sample(self) -> np.ndarray:
        x = np.zeros(self.model.n)
        for idx in self.model.ws_index:
            x[idx] = self.rng.uniform(self.lo, self.hi)
        return x

    def goal_sample(self) -> np.ndarray:
        x = np.zeros(self.model.n)
        for idx, g in zip(self.model.ws_index, self.env.goals):
            x[idx] = g.center
        return x

    def select_rrt(self) -> tuple:
        cfg = self.config
        p = self.rng.random()
        clone_eps = cfg.epsilon if cfg.bias == "clone" else 0.0
        if p < clone_eps:
            target = clone_sample(self.uniform_sample(), self.bias, self.model.ws_index)
        elif p < clone_eps + cfg.goal_bias:
            target = self.goal_sample()
        else:
            target = self.uniform_sample()
        if cfg.cov_weight > 0.0:
            d2 = np.sum((self.tree.means.points.view - target) ** 2, axis=1)
            d2 = d2 + cfg.cov_weight * self.tree.gamma_traces.view
            return self.tree.nodes[int(np.argmin(d2))], target
        return self.tree.nearest(target), target

    def select_est(self) -> BeliefNode:
        cfg = self.config
        p = self.rng.random()
        if cfg.bias == "weight" and p < cfg.epsilon:
            return biased_pdf_sample(self.tree, self.rng)
        w = self.tree.sparsity_weights()
        return self.tree.nodes[weighted_choice(w, float(np.sum(w)), self.rng)]

    # -- extension ------------------------------------------------------
    def steer_controls(self, start: np.ndarray, target: np.ndarray) -> np.ndarray:
        A, B = self.model.A, self.model.B
        x = start
        out = np.empty((self.config.edge_steps, self.model.m))
        for k in range(self.config.edge_steps):
            ax = A @ x
            u = self._steer @ (target[self._ws_all] - ax[self._ws_all])
            u = np.clip(u, -self._u_max, self._u_max)
            out[k] = u
            x = ax + B @ u
        return out

    def random_controls(self) -> np.ndarray:
        u = self.rng.uniform(-self._u_max, self._u_max)
        return np.tile(u, (self.config.edge_steps, 1))

    def extend(self, node: BeliefNode, target: Optional[np.ndarray]) -> tuple:
        if self.config.planner == "est":
            if self.rng.random() < self.config.goal_bias:
                target = self.goal_sample()
            else:
                target = None
        controls = self.random_controls() if target is None else self.steer_controls(node.belief.mean, target)
        return advance(self.ctx, node.belief, controls, keep_prefix=True)

    # -- main loop ------------------------------------------------------
    def run(self) -> PlanResult:
        cfg = self.config
        t0 = time.perf_counter()
        root = self.tree.root
        cause = self.ctx.validator.failure(root.belief.mean, root.belief.gamma)
        if cause is not None:
            raise SetupError(f"start belief violates the {cause} constraint")
        goal = root if self.ctx.at_goal(root.belief) else None
        it = 0
        while goal is None and it < cfg.max_iterations:
            if cfg.time_budget is not None and time.perf_counter() - t0 > cfg.time_budget:
                break
            it += 1
            if cfg.planner == "rrt":
                node, target = self.select_rrt()
            else:
                node, target = self.select_est(), None
            if cfg.bias == "rebranch" and self.rng.random() < cfg.epsilon:
                node, created = rebranch(self.tree, node, self.ctx, self.bias)
                goal = next((n for n in created if self.ctx.at_goal(n.belief)), None)
                if goal is not None:
                    break
            belief, edge, cause = self.extend(node, target)
            self.evaluations += 1
            if cause is not None:
                self.rejections[cause] += 1
            if belief is None:
                continue
            new = self.tree.add(node, belief, edge)
            if self.ctx.at_goal(belief):
                goal = new
        rejections = self.rejections + self.bias.rebranch_rejections
        plan = extract_plan(self.tree, goal) if goal is not None else None
        return PlanResult(
            success=goal is not None, plan=plan, iterations=it, tree_size=len(self.tree),
            evaluations=self.evaluations + self.bias.rebranch_evaluations, rejections=rejections,
            rebranch_attempts=self.bias.rebranch_attempts,
            rebranch_successes=self.bias.rebranch_successes,
            elapsed=time.perf_counter() - t0, tree=self.tree,
        )


def extract_plan(tree: BeliefTree, goal_node: BeliefNode, tol: float = 1e-9) -> MotionPlan:
    model = tree.model
    path = tree.path(goal_node)
    edges = [n.edge for n in path[1:]]
    root = path[0].belief
    if edges:
        U = np.vstack([e.controls for e in edges])
        X = np.vstack([root.mean[None, :]] + [e.states[1:] for e in edges])
        steps = [s for e in edges for s in e.schedule.steps]
        gammas = [root.gamma] + [b.gamma for e in edges for b in e.beliefs]
    else:
        U, X, steps, gammas = np.zeros((0, model.m)), root.mean[None, :], [], [root.gamma]
    plan = MotionPlan(
        controls=tuple(U[:, sl] for sl in model.control_slices),
        states=tuple(X[:, sl] for sl in model.state_slices),
        schedule=MeasurementSchedule(steps),
        gammas=np.array(gammas),
    )
    err = plan.replay_error(model)
    if err > tol:
        raise ConsistencyError(f"nominal replay mismatch {err:.3e}")
    return plan


def plan(env, config: PlannerConfig, gains: Optional[GainSet] = None, keep_tree: bool = False) -> PlanResult:
    result = Planner(env, config, gains).run()
    if not keep_tree:
        result.tree = None
    return result


def revalidate(env, plan: MotionPlan, gains: Optional[GainSet] = None,
               divide_pair_budget: bool = True) -> Optional[str]:
    """Independent re-propagation of a plan from the root; returns a failure
    description or None when every step and the terminal goal check pass."""
    model = env.model
    gains = gains or GainSet.lqr(model, env.lqr_q, env.lqr_r)
    validator = Validator(model, env.obstacles, env.bounds, env.budget, divide_pair_budget)
    start = ExpectedBelief.root(env.start_mean, env.start_cov)
    if np.max(np.abs(plan.composed_states()[0] - start.mean)) > 1e-12:
        return "plan does not start at the environment start"
    if plan.replay_error(model) > 1e-9:
        return "nominal replay mismatch"
    cause = validator.failure(start.mean, start.gamma)
    if cause is not None:
        return f"{cause} constraint violated at step 0"
    try:
        end, edge = propagate_edge(model, start, plan.composed_controls(), plan.schedule, gains.K)
    except NumericError:
        return "numeric failure during re-propagation"
    for k, b in enumerate(edge.beliefs, start=1):
        cause = validator.failure(b.mean, b.gamma, plan.schedule[k - 1])
        if cause is not None:
            return f"{cause} constraint violated at step {k}"
    if np.max(np.abs(edge.states - plan.composed_states())) > 1e-9:
        return "nominal states differ from re-propagation"
    if not validator.at_goal(end.mean, end.gamma, env.goals):
        return "goal chance constraint violated"
    return None

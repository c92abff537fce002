"""Monte-Carlo execution of plans and brute-force probability estimates.

Nothing here reuses the planner's expected-belief recursion: rollouts run
the true noisy dynamics, a centralized Kalman filter on sampled
measurements and the feedback law, and every constraint is judged on the
sampled true states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .chance import ObstacleField
from .propagation import GainSet
from .team import pair_rows

MIN_SAMPLES = 1000


def mc_probability(mean, cov, event: Callable[[np.ndarray], np.ndarray], samples: int,
                   rng: np.random.Generator) -> tuple:
    """Estimate ``P(event)`` under ``N(mean, cov)``.

    ``event`` maps an (S, d) sample array to a boolean array of length S.

    Returns:
        ``(estimate, stderr)`` with the binomial standard error.
    """
    if samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {samples}")
    mean = np.asarray(mean, dtype=float)
    draws = rng.multivariate_normal(mean, np.asarray(cov, dtype=float), size=samples, method="eigh")
    hits = np.asarray(event(draws), dtype=bool)
    p = float(np.mean(hits))
    return p, math.sqrt(p * (1.0 - p) / samples)


@dataclass(frozen=True)
class PairSensor:
    """One exteroceptive pair as seen by the simulator."""

    rows: np.ndarray  # (q, n) over the composed state
    R: np.ndarray
    ws_i: np.ndarray
    ws_j: np.ndarray
    r_ext: float


@dataclass
class RolloutTrace:
    states: np.ndarray  # (N, T + 1, n) true states
    estimates: np.ndarray  # (N, T + 1, n) filter means
    cl_failures: np.ndarray  # (N, T, P) scheduled pair unavailable on the true states
    excluded: np.ndarray  # (N,) numeric blowups


def _batched_update(S_bar: np.ndarray, C: np.ndarray, R: np.ndarray) -> tuple:
    """Kalman gains and posterior covariances for a stack of priors."""
    CS = np.einsum("qn,bnm->bqm", C, S_bar)
    innov = np.einsum("bqm,pm->bqp", CS, C) + R
    gain = np.swapaxes(np.linalg.solve(innov, CS), 1, 2)
    post = S_bar - gain @ CS
    return gain, 0.5 * (post + np.swapaxes(post, 1, 2))


def closed_loop(A, B, Q, K, mean0, sigma0, controls, nominal, rollouts: int,
                rng: np.random.Generator, C_prop=None, R_prop=None,
                pairs: Sequence[PairSensor] = (), schedule: Sequence = ()) -> RolloutTrace:
    """Simulate ``rollouts`` executions of a nominal plan.

    A scheduled pair delivers its measurement only when the true positions
    after the transition lie within its radius; otherwise the step is
    flagged and the filter runs on the remaining rows.
    """
    A, B, Q, K = (np.asarray(M, dtype=float) for M in (A, B, Q, K))
    U = np.asarray(controls, dtype=float).reshape(-1, B.shape[1])
    Xn = np.asarray(nominal, dtype=float)
    n, T, N = A.shape[0], U.shape[0], rollouts
    if C_prop is None:
        C_prop, R_prop = np.zeros((0, n)), np.zeros((0, 0))
    C_prop, R_prop = np.asarray(C_prop, float), np.asarray(R_prop, float)
    schedule = list(schedule) if len(schedule) else [frozenset()] * T
    if len(schedule) != T:
        raise ValueError("schedule length must equal the number of control steps")

    sigma0 = np.asarray(sigma0, dtype=float)
    X = rng.multivariate_normal(np.asarray(mean0, float), sigma0, size=N, method="eigh")
    Xh = np.tile(np.asarray(mean0, float), (N, 1))
    S = np.tile(sigma0, (N, 1, 1))
    q_noise = rng.multivariate_normal(np.zeros(n), Q, size=(T, N), method="eigh")

    states = np.empty((N, T + 1, n))
    est = np.empty((N, T + 1, n))
    states[:, 0], est[:, 0] = X, Xh
    cl = np.zeros((N, T, len(pairs)), dtype=bool)
    bad = np.zeros(N, dtype=bool)

    for k in range(T):
        u = U[k] - (Xh - Xn[k]) @ K.T
        X = X @ A.T + u @ B.T + q_noise[k]
        Xh = Xh @ A.T + u @ B.T
        S = A @ S @ A.T + Q
        sched = sorted(schedule[k])
        delivered = np.ones((N, len(sched)), dtype=bool)
        for c, p in enumerate(sched):
            pr = pairs[p]
            d = X[:, pr.ws_i] - X[:, pr.ws_j]
            delivered[:, c] = np.sqrt(np.sum(d * d, axis=1)) <= pr.r_ext
            cl[:, k, p] = ~delivered[:, c]
        # rollouts sharing a delivered set share the measurement matrix
        keys = delivered @ (1 << np.arange(len(sched))) if sched else np.zeros(N, dtype=int)
        for key in np.unique(keys):
            g = np.nonzero(keys == key)[0]
            active = [p for c, p in enumerate(sched) if key >> c & 1]
            C = np.vstack([C_prop] + [pairs[p].rows for p in active])
            if C.shape[0] == 0:
                continue
            R = np.zeros((C.shape[0], C.shape[0]))
            R[: R_prop.shape[0], : R_prop.shape[0]] = R_prop
            off = R_prop.shape[0]
            for p in active:
                q = pairs[p].R.shape[0]
                R[off:off + q, off:off + q] = pairs[p].R
                off += q
            v = rng.multivariate_normal(np.zeros(C.shape[0]), R, size=g.size, method="eigh")
            y = X[g] @ C.T + v
            try:
                gain, post = _batched_update(S[g], C, R)
            except np.linalg.LinAlgError:
                bad[g] = True
                continue
            innov = y - Xh[g] @ C.T
            Xh[g] = Xh[g] + np.einsum("bnq,bq->bn", gain, innov)
            S[g] = post
        blown = ~(np.all(np.isfinite(X), axis=1) & np.all(np.isfinite(Xh), axis=1))
        if blown.any():
            bad |= blown
            X[blown], Xh[blown] = Xn[k + 1], Xn[k + 1]
            S[blown] = sigma0
        states[:, k + 1], est[:, k + 1] = X, Xh
    return RolloutTrace(states, est, cl, bad)


@dataclass
class RolloutReport:
    """Empirical per-step violation rates over the kept rollouts."""

    obstacle: np.ndarray  # (T + 1, N_A)
    robot_robot: np.ndarray  # (T + 1, pairs of robots)
    cl: np.ndarray  # (T, extero pairs)
    goal: float
    rollouts: int
    excluded: int
    seed: Optional[int] = None
    robot_pairs: list = field(default_factory=list)

    @property
    def kept(self) -> int:
        return self.rollouts - self.excluded

    def max_rates(self) -> dict:
        def top(a):
            return float(a.max()) if a.size else 0.0
        return {"obstacle": top(self.obstacle), "robot_robot": top(self.robot_robot),
                "cl": top(self.cl), "goal": self.goal}

    def margin(self, p: float, sigmas: float = 3.0) -> float:
        return p + sigmas * math.sqrt(max(p * (1.0 - p), 0.0) / max(self.kept, 1))

    def within_budget(self, budget, p_rob_pair: float, p_ncl_pair: float, sigmas: float = 3.0) -> dict:
        """Compare every rate with its threshold plus a ``sigmas`` sampling margin."""
        top = self.max_rates()
        goal_floor = budget.p_safe - (self.margin(1.0 - budget.p_safe, sigmas) - (1.0 - budget.p_safe))
        return {
            "obstacle": top["obstacle"] <= self.margin(budget.p_obs, sigmas),
            "robot_robot": top["robot_robot"] <= self.margin(p_rob_pair, sigmas),
            "cl": top["cl"] <= self.margin(p_ncl_pair, sigmas),
            "goal": self.goal >= goal_floor,
        }

    def to_dict(self) -> dict:
        out = {"rollouts": self.rollouts, "excluded": self.excluded, "seed": self.seed}
        out.update({f"max_{k}": v for k, v in self.max_rates().items()})
        return out


def pair_sensors(model) -> list:
    return [PairSensor(pair_rows(model, k), p.R_ext, model.ws_index[p.i], model.ws_index[p.j], p.r_ext)
            for k, p in enumerate(model.pairs)]


def execute_plan(env, plan, rollouts: int, seed: Optional[int] = 0,
                 gains: Optional[GainSet] = None) -> RolloutReport:
    """Run ``plan`` in closed loop on ``env`` and tally violations on true states."""
    model = env.model
    gains = gains or GainSet.lqr(model, env.lqr_q, env.lqr_r)
    rng = np.random.default_rng(seed)
    trace = closed_loop(model.A, model.B, model.Q, gains.K, env.start_mean, env.start_cov,
                        plan.composed_controls(), plan.composed_states(), rollouts, rng,
                        model.C_prop, model.R_prop, pair_sensors(model), plan.schedule.steps)
    keep = ~trace.excluded
    X = trace.states[keep]
    M, T1 = X.shape[0], X.shape[1]
    field_ = ObstacleField(env.obstacles, env.bounds)
    robots = model.robots
    pos = [X[:, :, idx] for idx in model.ws_index]

    obstacle = np.zeros((T1, len(robots)))
    for i, r in enumerate(robots):
        clear = field_.clearance_many(pos[i].reshape(-1, model.workspace_dim)).reshape(M, T1)
        obstacle[:, i] = np.mean(clear <= r.body_radius, axis=0) if M else 0.0

    rpairs = [(i, j) for i in range(len(robots)) for j in range(i + 1, len(robots))]
    robot_robot = np.zeros((T1, len(rpairs)))
    for c, (i, j) in enumerate(rpairs):
        d = np.linalg.norm(pos[i] - pos[j], axis=-1)
        robot_robot[:, c] = np.mean(d <= robots[i].body_radius + robots[j].body_radius, axis=0) if M else 0.0

    cl = np.mean(trace.cl_failures[keep], axis=0) if M else np.zeros(trace.cl_failures.shape[1:])
    reached = np.ones(M, dtype=bool)
    for i, g in enumerate(env.goals):
        reached &= np.linalg.norm(pos[i][:, -1] - np.asarray(g.center), axis=-1) <= g.radius
    goal = float(np.mean(reached)) if M else 0.0
    return RolloutReport(obstacle, robot_robot, cl, goal, rollouts, int(trace.excluded.sum()), seed, rpairs)

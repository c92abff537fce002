"""Expected-belief propagation: KF covariance, estimate spread and LQR gains.

The expected belief of the closed-loop system is Gaussian about the nominal
trajectory with covariance ``Gamma = Sigma + Lambda``, where ``Sigma`` is the
online Kalman filter covariance and ``Lambda`` the spread of the estimate
itself, induced by measurements that are unknown at planning time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve, solve_discrete_are

from .gaussian import NumericError, psd_repair
from .team import MeasurementSchedule, ModelError, RobotModel, TeamModel, assemble_measurement

JITTER = 1e-12


@dataclass(frozen=True)
class ExpectedBelief:
    mean: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray
    time_index: int = 0

    @property
    def gamma(self) -> np.ndarray:
        return self.sigma + self.lam

    @classmethod
    def root(cls, mean, sigma0) -> "ExpectedBelief":
        sigma0 = psd_repair(np.asarray(sigma0, dtype=float))
        return cls(np.asarray(mean, dtype=float).copy(), sigma0, np.zeros_like(sigma0), 0)


def lqr_gain(robot, Q_cost=None, R_cost=None) -> np.ndarray:
    """Infinite-horizon discrete LQR gain from the algebraic Riccati equation.

    Args:
        robot: anything with ``A`` and ``B`` matrices.
        Q_cost: state weight, identity by default.
        R_cost: control weight, identity by default.

    Raises:
        ModelError: if no stabilizing solution exists.
    """
    A, B = np.asarray(robot.A, float), np.asarray(robot.B, float)
    n, m = B.shape
    Qc = np.eye(n) if Q_cost is None else np.asarray(Q_cost, float)
    Rc = np.eye(m) if R_cost is None else np.asarray(R_cost, float)
    try:
        P = solve_discrete_are(A, B, Qc, Rc)
    except (LinAlgError, ValueError) as exc:
        raise ModelError(f"no stabilizing Riccati solution; is (A, B) stabilizable? ({exc})") from exc
    BtP = B.T @ P
    K = np.linalg.solve(Rc + BtP @ B, BtP @ A)
    if not np.all(np.isfinite(K)) or spectral_radius(A - B @ K) >= 1.0:
        raise ModelError("LQR closed loop is not Schur stable")
    return K


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0


@dataclass(frozen=True)
class GainSet:
    gains: tuple
    K: np.ndarray = field(repr=False)

    @classmethod
    def from_gains(cls, robots: Sequence[RobotModel], gains: Sequence[np.ndarray]) -> "GainSet":
        gains = tuple(np.asarray(g, dtype=float) for g in gains)
        for r, g in zip(robots, gains):
            if g.shape != (r.m, r.n):
                raise ModelError(f"gain shape {g.shape} does not match robot ({r.m}, {r.n})")
            if spectral_radius(r.A - r.B @ g) >= 1.0:
                raise ModelError("feedback gain does not stabilize robot")
        return cls(gains, block_diag(*gains))

    @classmethod
    def lqr(cls, model: TeamModel, Q_cost=None, R_cost=None) -> "GainSet":
        return cls.from_gains(model.robots, [lqr_gain(r, Q_cost, R_cost) for r in model.robots])


def _kalman_update(S_bar: np.ndarray, C: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Return ``L C S_bar`` for gain ``L = S_bar C^T (C S_bar C^T + R)^-1``."""
    CS = C @ S_bar
    innov = CS @ C.T + R
    try:
        fac = cho_factor(innov, check_finite=False)
    except LinAlgError:
        try:
            fac = cho_factor(innov + JITTER * np.eye(innov.shape[0]), check_finite=False)
        except LinAlgError as exc:
            raise NumericError("singular innovation covariance") from exc
    return CS.T @ cho_solve(fac, CS, check_finite=False)


def step_arrays(A, B, Q, F, mean, sigma, lam, u, C, R):
    """One propagation step on raw arrays; ``F`` is the closed loop ``A - B K``."""
    mean_next = A @ mean + B @ u
    S_bar = A @ sigma @ A.T + Q
    lam_next = F @ lam @ F.T
    if C.shape[0]:
        info = _kalman_update(S_bar, C, R)
        sigma_next = S_bar - info
        lam_next = lam_next + info
    else:
        sigma_next = S_bar
    return mean_next, psd_repair(sigma_next), psd_repair(lam_next)


def propagate_step(system, belief: ExpectedBelief, u, C, R, K) -> ExpectedBelief:
    A, B = system.A, system.B
    F = A - B @ np.asarray(K, dtype=float)
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    R = np.asarray(R, dtype=float).reshape(C.shape[0], C.shape[0])
    mean, sigma, lam = step_arrays(
        A, B, system.Q, F, belief.mean, belief.sigma, belief.lam, np.asarray(u, float), C, R
    )
    return ExpectedBelief(mean, sigma, lam, belief.time_index + 1)


@dataclass(frozen=True)
class EdgeRecord:
    controls: np.ndarray  # (L, m)
    states: np.ndarray  # (L + 1, n), nominal, first row is the parent mean
    schedule: MeasurementSchedule
    beliefs: tuple = field(default=(), repr=False)  # successor beliefs, one per step

    def __len__(self) -> int:
        return self.controls.shape[0]


def propagate_edge(
    model: TeamModel, start: ExpectedBelief, controls, schedule: MeasurementSchedule, K
) -> tuple:
    """Fold :func:`propagate_step` over an edge; returns ``(end, EdgeRecord)``."""
    controls = np.asarray(controls, dtype=float).reshape(-1, model.m)
    if len(schedule) != controls.shape[0]:
        raise ValueError("schedule length must equal the number of control steps")
    F = model.A - model.B @ np.asarray(K, dtype=float)
    b = start
    states = [start.mean]
    beliefs = []
    for k, u in enumerate(controls):
        C, R = assemble_measurement(model, schedule[k])
        mean, sigma, lam = step_arrays(model.A, model.B, model.Q, F, b.mean, b.sigma, b.lam, u, C, R)
        b = ExpectedBelief(mean, sigma, lam, b.time_index + 1)
        states.append(mean)
        beliefs.append(b)
    return b, EdgeRecord(controls, np.array(states), schedule, tuple(beliefs))

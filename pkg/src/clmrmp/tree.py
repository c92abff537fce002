"""Belief search tree, nearest-neighbour tables and validated edge roll-out."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .chance import NUMERIC, GoalRegion, Validator
from .gaussian import NumericError, psd_repair
from .propagation import EdgeRecord, ExpectedBelief, _kalman_update
from .team import MeasurementSchedule, TeamModel, assemble_measurement


class GrowingArray:
    """Row-appendable float array with amortized doubling."""

    def __init__(self, row_shape: tuple, capacity: int = 64):
        self._data = np.empty((capacity,) + tuple(row_shape))
        self.size = 0

    def append(self, row) -> int:
        if self.size == self._data.shape[0]:
            grown = np.empty((2 * self.size,) + self._data.shape[1:])
            grown[: self.size] = self._data[: self.size]
            self._data = grown
        self._data[self.size] = row
        self.size += 1
        return self.size - 1

    @property
    def view(self) -> np.ndarray:
        return self._data[: self.size]

    def __len__(self) -> int:
        return self.size


class NearestTable:
    """Brute-force nearest neighbour over appended points (ties -> lowest id)."""

    def __init__(self, dim: int):
        self.points = GrowingArray((dim,))
        self.ids: list = []

    def add(self, point, node_id: int) -> None:
        self.points.append(point)
        self.ids.append(node_id)

    def nearest(self, query) -> tuple:
        d2 = np.sum((self.points.view - query) ** 2, axis=1)
        k = int(np.argmin(d2))
        return self.ids[k], float(np.sqrt(d2[k]))

    def within(self, query, radius: float) -> np.ndarray:
        d2 = np.sum((self.points.view - query) ** 2, axis=1)
        return np.nonzero(d2 <= radius * radius)[0]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class BeliefNode:
    id: int
    belief: ExpectedBelief
    parent: Optional[int]
    edge: Optional[EdgeRecord]
    ws: np.ndarray = field(repr=False)  # (N_A, w) projected means
    schedule_in: frozenset = frozenset()  # pairs measured on the final step into this node

    @property
    def time_index(self) -> int:
        return self.belief.time_index


class BeliefTree:
    """Search tree over expected beliefs.

    Keeps a composed-mean nearest table for RRT, per-(time, robot) workspace
    tables for re-branching, the EST sparsity counts and the distance-weight
    PDF; all are updated incrementally on :meth:`add`.
    """

    def __init__(self, model: TeamModel, root: ExpectedBelief, est_radius: float = 1.0,
                 weight_fn=None):
        self.model = model
        self.nodes: list = []
        self.means = NearestTable(model.n)
        self.by_time: dict = {}
        self.est_radius = est_radius
        self.neighbor_counts = GrowingArray(())
        self.weight_fn = weight_fn
        self.dist_weights = GrowingArray(())
        self.weight_total = 0.0
        self.gamma_traces = GrowingArray(())
        self._insert(root, None, None, frozenset())

    @property
    def root(self) -> BeliefNode:
        return self.nodes[0]

    def __len__(self) -> int:
        return len(self.nodes)

    def _insert(self, belief, parent, edge, schedule_in) -> BeliefNode:
        node = BeliefNode(len(self.nodes), belief, parent, edge,
                          self.model.workspace_positions(belief.mean), schedule_in)
        close = self.means.within(belief.mean, self.est_radius) if len(self.means) else np.empty(0, int)
        counts = self.neighbor_counts._data
        counts[close] += 1.0
        self.neighbor_counts.append(float(close.size))
        self.means.add(belief.mean, node.id)
        self.gamma_traces.append(float(np.trace(belief.sigma) + np.trace(belief.lam)))
        self.nodes.append(node)
        per_robot = self.by_time.get(node.time_index)
        if per_robot is None:
            per_robot = self.by_time[node.time_index] = [NearestTable(self.model.workspace_dim)
                                                         for _ in range(self.model.n_robots)]
        for r, table in enumerate(per_robot):
            table.add(node.ws[r], node.id)
        if self.weight_fn is not None:
            w = self.weight_fn(node.ws)
            self.dist_weights.append(w)
            self.weight_total += w
        return node

    def add(self, parent: BeliefNode, belief: ExpectedBelief, edge: EdgeRecord) -> BeliefNode:
        if belief.time_index != parent.time_index + len(edge):
            raise ValueError("child time index must equal parent time plus edge length")
        return self._insert(belief, parent.id, edge, edge.schedule[-1] if len(edge) else frozenset())

    def path(self, node: BeliefNode) -> list:
        out = []
        cur = node
        while cur is not None:
            out.append(cur)
            cur = self.nodes[cur.parent] if cur.parent is not None else None
        return out[::-1]

    def path_controls(self, node: BeliefNode) -> np.ndarray:
        edges = [n.edge.controls for n in self.path(node)[1:]]
        if not edges:
            return np.zeros((0, self.model.m))
        return np.vstack(edges)

    def nearest(self, query) -> BeliefNode:
        node_id, _ = self.means.nearest(query)
        return self.nodes[node_id]

    def sparsity_weights(self) -> np.ndarray:
        return 1.0 / (1.0 + self.neighbor_counts.view)

    def distance_pdf(self) -> np.ndarray:
        return self.dist_weights.view / self.weight_total


@dataclass
class SearchContext:
    """Everything needed to roll beliefs forward and validate them."""

    model: TeamModel
    validator: Validator
    K: np.ndarray
    goals: Sequence[GoalRegion]

    def __post_init__(self):
        self.F = self.model.A - self.model.B @ self.K

    def at_goal(self, belief: ExpectedBelief) -> bool:
        return self.validator.at_goal(belief.mean, belief.gamma, self.goals)


def advance(ctx: SearchContext, start: ExpectedBelief, controls: np.ndarray,
            schedule: Optional[Sequence] = None, keep_prefix: bool = False) -> tuple:
    """Roll ``controls`` forward from ``start``, validating every step.

    When ``schedule`` is None each step measures exactly the pairs whose
    availability check passes on the predicted expected belief.

    Returns:
        ``(end_belief, edge, cause)``. ``cause`` names the first violated
        constraint family or is None. On a violation the belief and edge are
        None, unless ``keep_prefix`` is set and at least one step passed, in
        which case they describe the valid prefix.
    """
    model = ctx.model
    A, B, Q, F = model.A, model.B, model.Q, ctx.F
    b = start
    states = [start.mean]
    beliefs = []
    sched = []
    cause = None
    try:
        for k, u in enumerate(controls):
            mean = A @ b.mean + B @ u
            S_bar = A @ b.sigma @ A.T + Q
            lam = F @ b.lam @ F.T
            if schedule is None:
                active = ctx.validator.enabled_pairs(mean, S_bar + lam)
            else:
                active = frozenset(schedule[k])
            C, R = assemble_measurement(model, active)
            if C.shape[0]:
                info = _kalman_update(S_bar, C, R)
                sigma, lam = psd_repair(S_bar - info), psd_repair(lam + info)
            else:
                sigma, lam = psd_repair(S_bar), psd_repair(lam)
            nxt = ExpectedBelief(mean, sigma, lam, b.time_index + 1)
            cause = ctx.validator.failure(mean, sigma + lam, active)
            if cause is not None:
                break
            b = nxt
            states.append(mean)
            beliefs.append(b)
            sched.append(active)
    except NumericError:
        cause = NUMERIC
    if cause is not None and not (keep_prefix and beliefs):
        return None, None, cause
    steps = len(beliefs)
    edge = EdgeRecord(np.asarray(controls, float).reshape(-1, model.m)[:steps], np.array(states),
                      MeasurementSchedule(sched), tuple(beliefs))
    return b, edge, cause

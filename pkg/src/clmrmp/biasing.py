"""Selection biases that pull robots together so cooperative measurements happen.

* cloning overwrites every robot's workspace coordinates in an RRT sample
  with one robot's, cycling through robots;
* distance weighting samples EST nodes with probability inversely
  proportional to the summed inter-robot distances inside each node;
* re-branching splices one robot's control history from another branch so
  it meets a target robot at the same time index.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tree import BeliefNode, BeliefTree, SearchContext, advance

WEIGHT_CAP = 1e6


@dataclass
class BiasState:
    n_robots: int
    clone_cursor: int = 0
    target_cursor: int = 0
    weight_cap: float = WEIGHT_CAP
    rebranch_attempts: int = 0
    rebranch_successes: int = 0
    rebranch_evaluations: int = 0
    rebranch_rejections: Counter = field(default_factory=Counter)

    def next_clone(self) -> int:
        i = self.clone_cursor
        self.clone_cursor = (i + 1) % self.n_robots
        return i

    def next_target(self) -> int:
        i = self.target_cursor
        self.target_cursor = (i + 1) % self.n_robots
        return i


def clone_sample(sample: np.ndarray, state: BiasState, ws_index) -> np.ndarray:
    """Copy the workspace coordinates of the cursor robot onto all robots."""
    src = state.next_clone()
    out = np.array(sample, dtype=float, copy=True)
    pos = out[ws_index[src]]
    for idx in ws_index:
        out[idx] = pos
    return out


def distance_weight(ws: np.ndarray, cap: float = WEIGHT_CAP) -> float:
    """Inverse of the summed distances over all ordered robot pairs.

    ``ws`` is an (N_A, w) array of projected means. Coincident robots would
    give an infinite weight, so the result is capped.
    """
    ws = np.asarray(ws, dtype=float)
    diff = ws[:, None, :] - ws[None, :, :]
    D = float(np.sum(np.sqrt(np.sum(diff * diff, axis=-1))))
    if D == 0.0:
        return cap
    return min(1.0 / D, cap)


def weighted_choice(weights: np.ndarray, total: float, rng: np.random.Generator) -> int:
    cdf = np.cumsum(weights)
    k = int(np.searchsorted(cdf, rng.random() * total, side="right"))
    return min(k, weights.size - 1)


def biased_pdf_sample(tree: BeliefTree, rng: np.random.Generator) -> BeliefNode:
    return tree.nodes[weighted_choice(tree.dist_weights.view, tree.weight_total, rng)]


def rebranch_candidate(tree: BeliefTree, selected: BeliefNode, target: int) -> tuple:
    """Closest other-robot position to ``target`` among nodes at the same time.

    Returns ``(i_pair, node_id, distance)``; ties go to the lowest robot
    index, then the earliest node.
    """
    tables = tree.by_time[selected.time_index]
    x_t = selected.ws[target]
    best = None
    for r, table in enumerate(tables):
        if r == target:
            continue
        node_id, dist = table.nearest(x_t)
        if best is None or dist < best[2]:
            best = (r, node_id, dist)
    return best


def rebranch(tree: BeliefTree, selected: BeliefNode, ctx: SearchContext,
             state: BiasState) -> tuple:
    """Re-branch ``selected`` toward the closest same-time pairing.

    Returns ``(node, new_nodes)``; on any failure ``node`` is ``selected``
    and ``new_nodes`` is empty, with the cause tallied on ``state``.
    """
    target = state.next_target()
    state.rebranch_attempts += 1
    i_pair, pair_id, _ = rebranch_candidate(tree, selected, target)
    if pair_id == selected.id:
        return selected, []

    sel_path = tree.path(selected)
    sel_u = tree.path_controls(selected)
    pair_u = tree.path_controls(tree.nodes[pair_id])
    cols = tree.model.control_slices[i_pair]
    new_u = sel_u.copy()
    new_u[:, cols] = pair_u[:, cols]
    differs = np.nonzero(np.any(new_u != sel_u, axis=1))[0]
    if differs.size == 0:
        return selected, []

    # branch off the deepest shared node; everything before it is unchanged
    first = int(differs[0])
    fork = max(k for k, n in enumerate(sel_path) if n.time_index <= first)
    parent = sel_path[fork]
    state.rebranch_evaluations += 1
    pending = []
    belief = parent.belief
    for nxt in sel_path[fork + 1:]:
        u = new_u[belief.time_index:nxt.time_index]
        belief, edge, cause = advance(ctx, belief, u)
        if cause is not None:
            state.rebranch_rejections[cause] += 1
            return selected, []
        pending.append((belief, edge))

    created = []
    for belief, edge in pending:
        parent = tree.add(parent, belief, edge)
        created.append(parent)
    state.rebranch_successes += 1
    return parent, created

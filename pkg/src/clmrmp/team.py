"""Per-robot linear-Gaussian models and the composed team system."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.linalg import block_diag

from .gaussian import psd_repair


class ModelError(ValueError):
    pass


def _mat(M, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(M, dtype=float))
    if arr.ndim != 2:
        raise ModelError(f"{name} must be a matrix")
    return arr


@dataclass(frozen=True)
class RobotModel:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    body_radius: float = 0.1
    C_prop: Optional[np.ndarray] = None
    R_prop: Optional[np.ndarray] = None
    workspace_proj: Optional[Sequence[int]] = None
    u_max: float = 0.5
    workspace_dim: int = 2

    def __post_init__(self):
        A, B, Q = _mat(self.A, "A"), _mat(self.B, "B"), _mat(self.Q, "Q")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ModelError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ModelError(f"B has {B.shape[0]} rows, expected {n}")
        if Q.shape != (n, n):
            raise ModelError(f"Q has shape {Q.shape}, expected {(n, n)}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", psd_repair(Q))
        if (self.C_prop is None) != (self.R_prop is None):
            raise ModelError("C_prop and R_prop must be given together")
        if self.C_prop is not None:
            C, R = _mat(self.C_prop, "C_prop"), _mat(self.R_prop, "R_prop")
            if C.shape[1] != n:
                raise ModelError(f"C_prop has {C.shape[1]} columns, expected {n}")
            if R.shape != (C.shape[0], C.shape[0]):
                raise ModelError(f"R_prop has shape {R.shape}, expected {(C.shape[0],) * 2}")
            object.__setattr__(self, "C_prop", C)
            object.__setattr__(self, "R_prop", psd_repair(R))
        w = self.workspace_dim
        if w not in (2, 3):
            raise ModelError("workspace dimension must be 2 or 3")
        proj = tuple(range(w)) if self.workspace_proj is None else tuple(int(i) for i in self.workspace_proj)
        if len(proj) != w or min(proj) < 0 or max(proj) >= n:
            raise ModelError(f"workspace_proj {proj} invalid for state dimension {n}")
        object.__setattr__(self, "workspace_proj", proj)
        if self.body_radius < 0:
            raise ModelError("body_radius must be nonnegative")
        if self.u_max <= 0:
            raise ModelError("u_max must be positive")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class ExteroPair:
    i: int
    j: int
    C_ext: np.ndarray
    R_ext: np.ndarray
    r_ext: float

    def __post_init__(self):
        if self.i == self.j:
            raise ModelError("exteroceptive pair needs two distinct robots")
        if self.i > self.j:
            raise ModelError("pairs are stored with i < j")
        C, R = _mat(self.C_ext, "C_ext"), _mat(self.R_ext, "R_ext")
        if R.shape != (C.shape[0], C.shape[0]):
            raise ModelError(f"R_ext has shape {R.shape}, expected {(C.shape[0],) * 2}")
        if self.r_ext < 0:
            raise ModelError("r_ext must be nonnegative")
        object.__setattr__(self, "C_ext", C)
        object.__setattr__(self, "R_ext", psd_repair(R))


@dataclass(frozen=True)
class TeamModel:
    """Composed team system; build with :func:`compose`."""

    robots: tuple
    pairs: tuple
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)
    state_slices: tuple = field(repr=False)
    control_slices: tuple = field(repr=False)
    ws_index: tuple = field(repr=False)
    C_prop: np.ndarray = field(repr=False)
    R_prop: np.ndarray = field(repr=False)
    _meas_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_robots(self) -> int:
        return len(self.robots)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def workspace_dim(self) -> int:
        return self.robots[0].workspace_dim

    def workspace_positions(self, X: np.ndarray) -> np.ndarray:
        """Return an (N_A, w) array of projected workspace positions."""
        return np.stack([X[idx] for idx in self.ws_index])


def compose(robots: Sequence[RobotModel], pairs: Iterable[ExteroPair] = ()) -> TeamModel:
    robots = tuple(robots)
    pairs = tuple(pairs)
    if len(robots) < 2:
        raise ModelError("a team needs at least two robots")
    if len({r.workspace_dim for r in robots}) != 1:
        raise ModelError("all robots must share the workspace dimension")

    state_slices, control_slices, ws_index = [], [], []
    n_off = m_off = 0
    for r in robots:
        state_slices.append(slice(n_off, n_off + r.n))
        control_slices.append(slice(m_off, m_off + r.m))
        ws_index.append(np.array([n_off + k for k in r.workspace_proj], dtype=int))
        n_off += r.n
        m_off += r.m

    seen = set()
    for p in pairs:
        if p.j >= len(robots):
            raise ModelError(f"pair ({p.i}, {p.j}) references a missing robot")
        if p.C_ext.shape[1] != robots[p.i].n + robots[p.j].n:
            raise ModelError(
                f"C_ext for pair ({p.i}, {p.j}) has {p.C_ext.shape[1]} columns, "
                f"expected {robots[p.i].n + robots[p.j].n}"
            )
        if (p.i, p.j) in seen:
            raise ModelError(f"duplicate pair ({p.i}, {p.j})")
        seen.add((p.i, p.j))

    prop_rows = []
    R_blocks = []
    for r, sl in zip(robots, state_slices):
        if r.C_prop is None:
            continue
        rows = np.zeros((r.C_prop.shape[0], n_off))
        rows[:, sl] = r.C_prop
        prop_rows.append(rows)
        R_blocks.append(r.R_prop)
    C_prop = np.vstack(prop_rows) if prop_rows else np.zeros((0, n_off))
    R_prop = block_diag(*R_blocks) if R_blocks else np.zeros((0, 0))

    return TeamModel(
        robots=robots,
        pairs=pairs,
        A=block_diag(*[r.A for r in robots]),
        B=block_diag(*[r.B for r in robots]),
        Q=block_diag(*[r.Q for r in robots]),
        state_slices=tuple(state_slices),
        control_slices=tuple(control_slices),
        ws_index=tuple(ws_index),
        C_prop=C_prop,
        R_prop=R_prop,
    )


def pair_rows(model: TeamModel, k: int) -> np.ndarray:
    """Scatter pair ``k``'s C_ext onto the composed state columns."""
    p = model.pairs[k]
    ni = model.robots[p.i].n
    rows = np.zeros((p.C_ext.shape[0], model.n))
    rows[:, model.state_slices[p.i]] = p.C_ext[:, :ni]
    rows[:, model.state_slices[p.j]] = p.C_ext[:, ni:]
    return rows


def assemble_measurement(model: TeamModel, active_pairs: Iterable[int]) -> tuple:
    """Build (C_k, R_k): proprioceptive stack above the active pair blocks."""
    key = frozenset(int(k) for k in active_pairs)
    hit = model._meas_cache.get(key)
    if hit is not None:
        return hit
    active = sorted(key)
    for k in active:
        if not 0 <= k < len(model.pairs):
            raise ValueError(f"unknown exteroceptive pair index {k}")
    if active:
        C = np.vstack([model.C_prop] + [pair_rows(model, k) for k in active])
        R = block_diag(model.R_prop, *[model.pairs[k].R_ext for k in active])
    else:
        C, R = model.C_prop, model.R_prop
    model._meas_cache[key] = (C, R)
    return C, R


@dataclass(frozen=True)
class MeasurementSchedule:
    """Active exteroceptive pairs per transition; proprioception is always on."""

    steps: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(frozenset(int(k) for k in s) for s in self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def __getitem__(self, k):
        return self.steps[k]

    def validate(self, model: TeamModel) -> None:
        for s in self.steps:
            for k in s:
                if not 0 <= k < len(model.pairs):
                    raise ValueError(f"schedule references unknown pair {k}")

    def materialize(self, model: TeamModel, k: int) -> tuple:
        return assemble_measurement(model, self.steps[k])


def pair_within_radius(model: TeamModel, X: np.ndarray, pair: int) -> bool:
    p = model.pairs[pair]
    d = X[model.ws_index[p.i]] - X[model.ws_index[p.j]]
    return bool(np.linalg.norm(d) <= p.r_ext)

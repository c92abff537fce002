"""Planning environments and their JSON file format.

Matrices are stored row-major with an explicit shape::

    {"shape": [2, 2], "data": [1, 0, 0, 1]}

See ``docs/environment-schema.md`` for the full layout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import block_diag

from .chance import BudgetError, GoalRegion, Obstacle, ProbabilityBudget, Validator
from .gaussian import GaussianBelief
from .team import ExteroPair, ModelError, RobotModel, TeamModel, compose

SCHEMA = "clmrmp-environment/1"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Environment:
    name: str
    bounds: tuple  # (lower, upper) workspace corners
    obstacles: tuple
    robots: tuple
    starts: tuple  # GaussianBelief per robot
    goals: tuple
    pairs: tuple
    budget: ProbabilityBudget
    description: str = ""
    lqr_q: Optional[np.ndarray] = None
    lqr_r: Optional[np.ndarray] = None
    model: TeamModel = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "model", compose(self.robots, self.pairs))

    @property
    def start_mean(self) -> np.ndarray:
        return np.concatenate([s.mean for s in self.starts])

    @property
    def start_cov(self) -> np.ndarray:
        return block_diag(*[s.covariance for s in self.starts])

    def with_pairs(self, pairs) -> "Environment":
        return Environment(self.name, self.bounds, self.obstacles, self.robots, self.starts,
                           self.goals, tuple(pairs), self.budget, self.description,
                           self.lqr_q, self.lqr_r)

    def validate(self, divide_pair_budget: bool = True) -> None:
        lo, hi = (np.asarray(b, float) for b in self.bounds)
        if np.any(hi <= lo):
            raise ConfigError("workspace: upper corner must exceed lower corner")
        for k, g in enumerate(self.goals):
            c = np.asarray(g.center)
            if np.any(c < lo) or np.any(c > hi):
                raise ConfigError(f"robots[{k}].goal: center {g.center} outside the workspace")
        v = Validator(self.model, self.obstacles, self.bounds, self.budget, divide_pair_budget)
        cause = v.failure(self.start_mean, self.start_cov)
        if cause is not None:
            raise ConfigError(f"robots[*].start: start beliefs violate the {cause} constraint")


def matrix_to_json(M) -> Optional[dict]:
    if M is None:
        return None
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return {"shape": list(M.shape), "data": [float(v) for v in M.reshape(-1)]}


def _matrix(obj, where: str) -> np.ndarray:
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise ConfigError(f"{where}: expected {{'shape': [r, c], 'data': [...]}}")
    shape = tuple(int(s) for s in obj["shape"])
    data = obj["data"]
    if len(shape) != 2 or len(data) != shape[0] * shape[1]:
        raise ConfigError(f"{where}: {len(data)} entries do not fill shape {shape}")
    try:
        return np.asarray(data, dtype=float).reshape(shape)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _opt_matrix(obj, where: str):
    return None if obj is None else _matrix(obj, where)


def _get(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing field '{key}'")
    return d[key]


def environment_from_dict(doc: dict, validate: bool = True) -> Environment:
    if doc.get("schema", SCHEMA) != SCHEMA:
        raise ConfigError(f"schema: unsupported {doc.get('schema')!r}")
    ws = _get(doc, "workspace", "environment")
    bounds = (tuple(float(v) for v in _get(ws, "lower", "workspace")),
              tuple(float(v) for v in _get(ws, "upper", "workspace")))
    obstacles = []
    for k, o in enumerate(doc.get("obstacles", [])):
        where = f"obstacles[{k}]"
        try:
            kind = _get(o, "type", where)
            if kind == "rect":
                obstacles.append(Obstacle.rect(_get(o, "lower", where), _get(o, "upper", where)))
            elif kind == "disc":
                obstacles.append(Obstacle.disc(_get(o, "center", where), _get(o, "radius", where)))
            else:
                raise ConfigError(f"{where}.type: unknown obstacle type {kind!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{where}: {exc}") from exc

    robots, starts, goals = [], [], []
    for k, r in enumerate(_get(doc, "robots", "environment")):
        where = f"robots[{k}]"
        try:
            robots.append(RobotModel(
                A=_matrix(_get(r, "A", where), f"{where}.A"),
                B=_matrix(_get(r, "B", where), f"{where}.B"),
                Q=_matrix(_get(r, "Q", where), f"{where}.Q"),
                C_prop=_opt_matrix(r.get("C_prop"), f"{where}.C_prop"),
                R_prop=_opt_matrix(r.get("R_prop"), f"{where}.R_prop"),
                body_radius=float(r.get("body_radius", 0.1)),
                workspace_proj=r.get("workspace_proj"),
                u_max=float(r.get("u_max", 0.5)),
                workspace_dim=len(bounds[0]),
            ))
            start = _get(r, "start", where)
            starts.append(GaussianBelief(_get(start, "mean", f"{where}.start"),
                                         _matrix(_get(start, "cov", f"{where}.start"), f"{where}.start.cov")))
            goal = _get(r, "goal", where)
            goals.append(GoalRegion(_get(goal, "center", f"{where}.goal"), float(_get(goal, "radius", f"{where}.goal"))))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        if starts[-1].dim != robots[-1].n:
            raise ConfigError(f"{where}.start: mean has {starts[-1].dim} entries, state has {robots[-1].n}")

    pairs = []
    for k, p in enumerate(doc.get("pairs", [])):
        where = f"pairs[{k}]"
        try:
            pairs.append(ExteroPair(int(_get(p, "i", where)), int(_get(p, "j", where)),
                                    _matrix(_get(p, "C_ext", where), f"{where}.C_ext"),
                                    _matrix(_get(p, "R_ext", where), f"{where}.R_ext"),
                                    float(_get(p, "r_ext", where))))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc

    b = _get(doc, "budget", "environment")
    try:
        budget = ProbabilityBudget(float(_get(b, "p_safe", "budget")), float(_get(b, "p_obs", "budget")),
                                   float(_get(b, "p_rob", "budget")), float(_get(b, "p_ncl", "budget")))
    except BudgetError as exc:
        raise ConfigError(f"budget: {exc}") from exc

    lqr = doc.get("lqr") or {}
    try:
        env = Environment(
            name=str(doc.get("name", "unnamed")), bounds=bounds, obstacles=tuple(obstacles),
            robots=tuple(robots), starts=tuple(starts), goals=tuple(goals), pairs=tuple(pairs),
            budget=budget, description=str(doc.get("description", "")),
            lqr_q=_opt_matrix(lqr.get("Q_cost"), "lqr.Q_cost"),
            lqr_r=_opt_matrix(lqr.get("R_cost"), "lqr.R_cost"),
        )
    except ModelError as exc:
        raise ConfigError(f"team: {exc}") from exc
    if validate:
        env.validate()
    return env


def environment_to_dict(env: Environment) -> dict:
    robots = []
    for r, s, g in zip(env.robots, env.starts, env.goals):
        robots.append({
            "A": matrix_to_json(r.A), "B": matrix_to_json(r.B), "Q": matrix_to_json(r.Q),
            "C_prop": matrix_to_json(r.C_prop), "R_prop": matrix_to_json(r.R_prop),
            "body_radius": r.body_radius, "workspace_proj": list(r.workspace_proj), "u_max": r.u_max,
            "start": {"mean": [float(v) for v in s.mean], "cov": matrix_to_json(s.covariance)},
            "goal": {"center": list(g.center), "radius": g.radius},
        })
    obstacles = []
    for o in env.obstacles:
        if o.kind == "rect":
            obstacles.append({"type": "rect", "lower": list(o.lower), "upper": list(o.upper)})
        else:
            obstacles.append({"type": "disc", "center": list(o.center), "radius": o.radius})
    doc = {
        "schema": SCHEMA,
        "name": env.name,
        "description": env.description,
        "units": {"length": "m", "time": "step", "probability": "1"},
        "workspace": {"lower": list(env.bounds[0]), "upper": list(env.bounds[1])},
        "obstacles": obstacles,
        "robots": robots,
        "pairs": [{"i": p.i, "j": p.j, "C_ext": matrix_to_json(p.C_ext), "R_ext": matrix_to_json(p.R_ext),
                   "r_ext": p.r_ext} for p in env.pairs],
        "budget": {"p_safe": env.budget.p_safe, "p_obs": env.budget.p_obs,
                   "p_rob": env.budget.p_rob, "p_ncl": env.budget.p_ncl},
    }
    if env.lqr_q is not None or env.lqr_r is not None:
        doc["lqr"] = {"Q_cost": matrix_to_json(env.lqr_q), "R_cost": matrix_to_json(env.lqr_r)}
    return doc


def builtin_names() -> list:
    files = resources.files("clmrmp").joinpath("data/envs").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".json"))


def _read_text(path) -> tuple:
    p = Path(path)
    if p.is_file():
        return p.read_text(), str(p)
    name = str(path)
    res = resources.files("clmrmp").joinpath(f"data/envs/{name}.json")
    if res.is_file():
        return res.read_text(), f"<builtin {name}>"
    raise ConfigError(f"{path}: no such file or built-in environment")


def load_environment(path, validate: bool = True) -> Environment:
    """Load an environment from a JSON file or a built-in name such as ``random2``."""
    text, label = _read_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{label}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return environment_from_dict(doc, validate)
    except ConfigError as exc:
        raise ConfigError(f"{label}: {exc}") from exc


def save_environment(env: Environment, path) -> None:
    Path(path).write_text(json.dumps(environment_to_dict(env), indent=2) + "\n")

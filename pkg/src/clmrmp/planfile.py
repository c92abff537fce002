"""JSON serialization of motion plans, with the environment embedded."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .environment import ConfigError, environment_from_dict, environment_to_dict
from .planners import MotionPlan
from .team import MeasurementSchedule

PLAN_SCHEMA = "clmrmp-plan/1"


def plan_to_dict(env, plan: MotionPlan, meta: dict | None = None) -> dict:
    doc = {
        "schema": PLAN_SCHEMA,
        "environment": environment_to_dict(env),
        "T": plan.T,
        "controls": [u.tolist() for u in plan.controls],
        "states": [x.tolist() for x in plan.states],
        "schedule": [sorted(s) for s in plan.schedule.steps],
    }
    if plan.gammas is not None:
        doc["gammas"] = plan.gammas.tolist()
    if meta:
        doc["meta"] = meta
    return doc


def plan_from_dict(doc: dict) -> tuple:
    """Return ``(env, plan, meta)``; raises :class:`ConfigError` on malformed input."""
    if doc.get("schema") != PLAN_SCHEMA:
        raise ConfigError(f"schema: expected {PLAN_SCHEMA!r}, got {doc.get('schema')!r}")
    try:
        env = environment_from_dict(doc["environment"])
        n_r = env.model.n_robots
        controls = tuple(np.asarray(u, dtype=float).reshape(-1, r.m) for u, r in zip(doc["controls"], env.robots))
        states = tuple(np.asarray(x, dtype=float).reshape(-1, r.n) for x, r in zip(doc["states"], env.robots))
        schedule = MeasurementSchedule(doc["schedule"])
        gammas = np.asarray(doc["gammas"], dtype=float) if "gammas" in doc else None
    except KeyError as exc:
        raise ConfigError(f"plan: missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"plan: {exc}") from exc
    if len(controls) != n_r or len(states) != n_r:
        raise ConfigError(f"plan: expected trajectories for {n_r} robots")
    T = len(schedule)
    if any(u.shape[0] != T for u in controls) or any(x.shape[0] != T + 1 for x in states):
        raise ConfigError(f"plan: trajectory lengths disagree with a {T}-step schedule")
    try:
        schedule.validate(env.model)
    except ValueError as exc:
        raise ConfigError(f"plan.schedule: {exc}") from exc
    return env, MotionPlan(controls, states, schedule, gammas), doc.get("meta", {})


def save_plan(path, env, plan: MotionPlan, meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(plan_to_dict(env, plan, meta), indent=1) + "\n")


def load_plan(path) -> tuple:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{p}: no such file") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return plan_from_dict(doc)
    except ConfigError as exc:
        raise ConfigError(f"{p}: {exc}") from exc

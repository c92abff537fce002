"""Seeded trial batches, summary statistics and result files.

Wall-clock measurements are kept out of ``stats.csv`` and ``trials.jsonl``
and written to ``timings.csv`` instead, so that repeated runs with the same
seeds produce byte-identical result files whenever no trial is cut off by
its time budget.
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .chance import CAUSES
from .gaussian import max_eigenvalue
from .montecarlo import execute_plan
from .planners import COMPATIBLE, MotionPlan, PlannerConfig, plan

QUANTILES = (("min", 0.0), ("q25", 0.25), ("median", 0.5), ("q75", 0.75), ("max", 1.0))
METRICS = ("iterations", "tree_size", "plan_steps") + tuple(f"rej_{c}" for c in CAUSES)
SWEEP_KEYS = {"planner": str, "bias": str, "epsilon": float, "goal_bias": float, "cov_weight": float,
              "edge_steps": int, "max_iterations": int, "est_radius": float}


class SweepError(ValueError):
    pass


def parse_sweep(spec: str, base: Optional[PlannerConfig] = None) -> list:
    """Expand ``"planner=rrt,est;bias=none,rebranch;epsilon=0,0.5"`` into configs.

    Keys may be any of ``SWEEP_KEYS``; omitted keys keep ``base`` values.
    Incompatible planner/bias cells are skipped and every zero-rate biased
    cell collapses onto the unbiased baseline, so each distinct
    configuration appears once, in first-seen order.
    """
    base = base or PlannerConfig()
    axes = {}
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        key, sep, values = part.partition("=")
        key = key.strip()
        if not sep or key not in SWEEP_KEYS:
            raise SweepError(f"sweep: cannot parse {part!r}; keys are {', '.join(SWEEP_KEYS)}")
        try:
            axes[key] = [SWEEP_KEYS[key](v.strip()) for v in values.split(",") if v.strip()]
        except ValueError as exc:
            raise SweepError(f"sweep: bad value in {part!r}") from exc
        if not axes[key]:
            raise SweepError(f"sweep: no values for {key!r}")
    keys = list(axes)
    out, seen = [], set()
    for combo in itertools.product(*(axes[k] for k in keys)):
        kw = dict(zip(keys, combo))
        cfg_kw = {**{f.name: getattr(base, f.name) for f in dataclasses.fields(base)}, **kw}
        if cfg_kw["bias"] not in COMPATIBLE.get(cfg_kw["planner"], ()):
            continue
        if cfg_kw["bias"] == "none" or cfg_kw["epsilon"] == 0.0:
            cfg_kw["bias"], cfg_kw["epsilon"] = "none", 0.0
        try:
            cfg = PlannerConfig(**cfg_kw)
        except ValueError as exc:
            raise SweepError(f"sweep: {exc}") from exc
        if cfg not in seen:
            seen.add(cfg)
            out.append(cfg)
    if not out:
        raise SweepError("sweep: no compatible planner/bias combination")
    return out


@dataclass
class TrialRecord:
    label: str
    trial: int
    seed: int
    success: bool
    iterations: int
    tree_size: int
    evaluations: int
    rejections: dict
    rejection_rates: dict
    plan_steps: Optional[int]
    rebranch_attempts: int = 0
    rebranch_successes: int = 0
    rollout: Optional[dict] = None
    elapsed: float = 0.0
    plan: Optional[MotionPlan] = field(default=None, repr=False)

    def to_json(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
             if f.name not in ("elapsed", "plan")}
        d["rejections"] = {c: int(self.rejections.get(c, 0)) for c in CAUSES}
        return d


@dataclass
class BenchStats:
    label: str
    config: PlannerConfig
    trials: int
    successes: int
    seeds: list
    distributions: dict  # metric -> np.ndarray
    times: np.ndarray

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials

    def quantiles(self, metric: str) -> dict:
        a = np.asarray(self.distributions[metric], dtype=float)
        if a.size == 0:
            return {q: None for q, _ in QUANTILES}
        return {q: float(np.quantile(a, p)) for q, p in QUANTILES}


def summarize(config: PlannerConfig, records: Sequence[TrialRecord]) -> BenchStats:
    dist = {
        "iterations": np.array([r.iterations for r in records]),
        "tree_size": np.array([r.tree_size for r in records]),
        "plan_steps": np.array([r.plan_steps for r in records if r.success]),
    }
    for c in CAUSES:
        dist[f"rej_{c}"] = np.array([r.rejection_rates.get(c, 0.0) for r in records])
    return BenchStats(config.label, config, len(records), sum(r.success for r in records),
                      [r.seed for r in records], dist, np.array([r.elapsed for r in records]))


def run_trial(env, config: PlannerConfig, trial: int, rollouts: int = 0) -> TrialRecord:
    result = plan(env, config)
    rollout = None
    if result.success and rollouts > 0:
        rollout = execute_plan(env, result.plan, rollouts, seed=config.seed).to_dict()
    return TrialRecord(
        label=config.label, trial=trial, seed=config.seed, success=result.success,
        iterations=result.iterations, tree_size=result.tree_size, evaluations=result.evaluations,
        rejections=dict(result.rejections), rejection_rates=result.rejection_rates(),
        plan_steps=result.plan.T if result.success else None,
        rebranch_attempts=result.rebranch_attempts, rebranch_successes=result.rebranch_successes,
        rollout=rollout, elapsed=result.elapsed, plan=result.plan,
    )


def _trial_job(args):
    return run_trial(*args)


def run_batch(env, configs: Sequence[PlannerConfig], trials: int, time_budget: Optional[float] = None,
              seed_base: int = 0, rollouts: int = 0, workers: int = 1) -> tuple:
    """Run ``trials`` seeded queries per configuration.

    Trial ``t`` of every configuration uses seed ``seed_base + t``.

    Returns:
        ``(stats, records)``: one :class:`BenchStats` per configuration and
        all :class:`TrialRecord` objects in (configuration, trial) order.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    jobs = []
    for cfg in configs:
        for t in range(trials):
            c = dataclasses.replace(cfg, seed=seed_base + t,
                                    time_budget=time_budget if time_budget is not None else cfg.time_budget)
            jobs.append((env, c, t, rollouts))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_trial_job, jobs))
    else:
        records = [_trial_job(j) for j in jobs]
    stats = [summarize(cfg, records[k * trials:(k + 1) * trials]) for k, cfg in enumerate(configs)]
    return stats, records


def stats_header() -> list:
    cols = ["label", "planner", "bias", "epsilon", "trials", "successes", "success_rate", "seed_first", "seed_last"]
    return cols + [f"{m}_{q}" for m in METRICS for q, _ in QUANTILES]


def stats_row(s: BenchStats) -> list:
    row = [s.label, s.config.planner, s.config.bias, s.config.epsilon, s.trials, s.successes,
           s.success_rate, s.seeds[0], s.seeds[-1]]
    for m in METRICS:
        row += ["" if v is None else v for v in s.quantiles(m).values()]
    return row


def trajectory_rows(model, plan: MotionPlan) -> tuple:
    """Header and rows: step, then per robot its nominal position and 2-sigma radius."""
    axes = "xyz"
    header = ["step"]
    for i in range(model.n_robots):
        header += [f"robot{i}_{axes[d]}" for d in range(model.workspace_dim)] + [f"robot{i}_r2sigma"]
    X = plan.composed_states()
    rows = []
    for k in range(plan.T + 1):
        row = [k]
        for i, idx in enumerate(model.ws_index):
            row += [float(v) for v in X[k, idx]]
            G = plan.gammas[k][np.ix_(idx, idx)]
            row.append(2.0 * float(np.sqrt(max_eigenvalue(G))))
        rows.append(row)
    return header, rows


def write_csv(path: Path, header, rows) -> None:
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def export_results(stats: Sequence[BenchStats], records: Sequence[TrialRecord], out_dir, model=None) -> list:
    """Write ``stats.csv``, ``trials.jsonl``, ``timings.csv`` and one trajectory CSV per success.

    ``model`` (the team model) is needed only when trajectories are written.
    Returns the written paths.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{out}: {exc.strerror or exc}") from exc
    written = [out / "stats.csv", out / "trials.jsonl", out / "timings.csv"]
    write_csv(written[0], stats_header(), [stats_row(s) for s in stats])
    try:
        with written[1].open("w") as fh:
            for r in records:
                fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"{written[1]}: {exc.strerror or exc}") from exc
    write_csv(written[2], ["label", "trial", "seed", "success", "elapsed_s"],
               [[r.label, r.trial, r.seed, r.success, r.elapsed] for r in records])
    winners = [r for r in records if r.success and r.plan is not None]
    if winners and model is not None:
        traj = out / "trajectories"
        traj.mkdir(exist_ok=True)
        for r in winners:
            path = traj / f"{r.label}_trial{r.trial:03d}.csv"
            write_csv(path, *trajectory_rows(model, r.plan))
            written.append(path)
    return written

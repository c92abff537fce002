"""Command-line entry point: ``clmrmp plan|bench|validate|check-theorems``.

Exit codes: 0 success, 2 no plan found, 3 configuration error,
4 validation failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import SweepError, export_results, parse_sweep, run_batch, trajectory_rows, write_csv
from .chance import Validator
from .environment import ConfigError, load_environment
from .montecarlo import execute_plan
from .planfile import load_plan, save_plan
from .planners import BIASES, PLANNERS, PlannerConfig, SetupError, plan, revalidate
from .soundness import availability_suite, robot_robot_suite

EXIT_OK, EXIT_NO_PLAN, EXIT_CONFIG, EXIT_INVALID = 0, 2, 3, 4


def _planner_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--goal-bias", type=float, default=PlannerConfig.goal_bias)
    p.add_argument("--cov-weight", type=float, default=PlannerConfig.cov_weight,
                   help="weight on trace(Gamma) in RRT nearest-node queries")
    p.add_argument("--edge-steps", type=int, default=PlannerConfig.edge_steps)
    p.add_argument("--max-iterations", type=int, default=PlannerConfig.max_iterations)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clmrmp", description="Chance-constrained multi-robot planning "
                                 "with cooperative localization.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan one query")
    p.add_argument("env", help="environment JSON file or built-in name")
    p.add_argument("--planner", choices=PLANNERS, default="rrt")
    p.add_argument("--bias", choices=BIASES, default="none")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-budget", type=float, default=None, help="seconds (default: iteration cap only)")
    p.add_argument("--no-extero", action="store_true", help="disable exteroceptive measurements")
    p.add_argument("--rollouts", type=int, default=0, help="Monte-Carlo rollouts of the returned plan")
    p.add_argument("--out", type=Path, default=None, help="directory for plan.json and trajectory.csv")
    _planner_args(p)

    b = sub.add_parser("bench", help="run a seeded sweep")
    b.add_argument("env")
    b.add_argument("--trials", type=int, default=50)
    b.add_argument("--sweep", default="planner=rrt,est;bias=none,clone,weight,rebranch;epsilon=0,0.1,0.5",
                   help="';'-separated key=v1,v2 axes, e.g. 'planner=rrt;bias=rebranch;epsilon=0,0.5'")
    b.add_argument("--time-budget", type=float, default=None)
    b.add_argument("--seed-base", type=int, default=0)
    b.add_argument("--rollouts", type=int, default=0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", type=Path, required=True)
    _planner_args(b)

    v = sub.add_parser("validate", help="re-validate a plan file and execute it in simulation")
    v.add_argument("plan_file", type=Path)
    v.add_argument("--rollouts", type=int, default=10_000)
    v.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("check-theorems", help="Monte-Carlo soundness of the pairwise checks")
    t.add_argument("--cases", type=int, default=500)
    t.add_argument("--samples", type=int, default=100_000)
    t.add_argument("--seed", type=int, default=0)
    return ap


def _config(args, **kw) -> PlannerConfig:
    return PlannerConfig(goal_bias=args.goal_bias, cov_weight=args.cov_weight, edge_steps=args.edge_steps,
                         max_iterations=args.max_iterations, **kw)


def _report_rollouts(env, rep) -> bool:
    v = Validator(env.model, env.obstacles, env.bounds, env.budget)
    checks = rep.within_budget(env.budget, v.p_rob_pair, v.p_ncl_pair)
    rates = rep.max_rates()
    for k, ok in checks.items():
        print(f"  {k:12s} {rates[k]:.4f}  {'ok' if ok else 'VIOLATED'}")
    if rep.excluded:
        print(f"  excluded {rep.excluded} rollouts after numeric blowup")
    return all(checks.values())


def cmd_plan(args) -> int:
    env = load_environment(args.env)
    cfg = _config(args, planner=args.planner, bias=args.bias, epsilon=args.epsilon, seed=args.seed,
                  time_budget=args.time_budget, use_extero=not args.no_extero)
    res = plan(env, cfg)
    rates = res.rejection_rates()
    print(f"{cfg.label} seed={cfg.seed}: {'solved' if res.success else 'no plan'} after "
          f"{res.iterations} iterations, tree {res.tree_size} nodes")
    print("  rejection rates: " + ", ".join(f"{c}={r:.4f}" for c, r in rates.items()))
    if not res.success:
        return EXIT_NO_PLAN
    print(f"  plan length {res.plan.T} steps, {sum(1 for s in res.plan.schedule if s)} with CL")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        meta = {"config": cfg.label, "seed": cfg.seed, "iterations": res.iterations, "tree_size": res.tree_size}
        save_plan(args.out / "plan.json", env, res.plan, meta)
        write_csv(args.out / "trajectory.csv", *trajectory_rows(env.model, res.plan))
    err = revalidate(env, res.plan, divide_pair_budget=cfg.divide_pair_budget)
    if err is not None:
        print(f"  re-validation failed: {err}")
        return EXIT_INVALID
    if args.rollouts > 0:
        print(f"  {args.rollouts} rollouts:")
        if not _report_rollouts(env, execute_plan(env, res.plan, args.rollouts, seed=args.seed)):
            return EXIT_INVALID
    return EXIT_OK


def cmd_bench(args) -> int:
    env = load_environment(args.env)
    base = _config(args)
    configs = parse_sweep(args.sweep, base)
    stats, records = run_batch(env, configs, args.trials, args.time_budget, args.seed_base,
                               args.rollouts, args.workers)
    export_results(stats, records, args.out, env.model)
    for s in stats:
        med = s.quantiles("rej_robot_robot")["median"]
        print(f"{s.label:22s} success {s.successes}/{s.trials}  median robot-robot rejection {med:.4f}")
    return EXIT_OK


def cmd_validate(args) -> int:
    env, mp, _ = load_plan(args.plan_file)
    err = revalidate(env, mp)
    if err is not None:
        print(f"re-validation failed: {err}")
        return EXIT_INVALID
    print(f"plan of {mp.T} steps passes re-validation; {args.rollouts} rollouts:")
    if args.rollouts > 0 and not _report_rollouts(env, execute_plan(env, mp, args.rollouts, seed=args.seed)):
        return EXIT_INVALID
    return EXIT_OK


def cmd_check_theorems(args) -> int:
    ok = True
    for suite, seed in ((robot_robot_suite, args.seed), (availability_suite, args.seed + 1)):
        rep = suite(args.cases, args.samples, seed)
        ok &= rep.ok
        print(f"{rep.name}: {rep.accepted}/{rep.cases} accepted, {len(rep.violations)} violations, "
              f"worst slack {rep.worst_slack:.5f}")
        for case, est, bound in rep.violations:
            print(f"  case {case}: estimate {est:.5f} > bound {bound:.5f}")
    return EXIT_OK if ok else EXIT_INVALID


COMMANDS = {"plan": cmd_plan, "bench": cmd_bench, "validate": cmd_validate, "check-theorems": cmd_check_theorems}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, SweepError, SetupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # invalid planner settings surface from PlannerConfig
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

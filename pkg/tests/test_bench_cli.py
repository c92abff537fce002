import csv
import json
import math

import numpy as np
import pytest
from conftest import make_env

from clmrmp.bench import (QUANTILES, SweepError, export_results, parse_sweep, run_batch, stats_header,
                          summarize, trajectory_rows)
from clmrmp.cli import EXIT_CONFIG, EXIT_INVALID, EXIT_NO_PLAN, EXIT_OK, main
from clmrmp.environment import ConfigError, save_environment
from clmrmp.planfile import load_plan, plan_from_dict, plan_to_dict, save_plan
from clmrmp.planners import PlannerConfig, plan


def near_env():
    return make_env([(3.0, 3.0), (4.0, 3.0)], [(3.55, 3.0), (4.55, 3.0)], goal_radius=0.6)


@pytest.fixture(scope="module")
def solved():
    env = near_env()
    return env, plan(env, PlannerConfig(goal_bias=0.5, max_iterations=50)).plan


@pytest.fixture
def env_file(tmp_path):
    path = tmp_path / "near.json"
    save_environment(near_env(), path)
    return path


def test_parse_sweep_default_grid():
    cfgs = parse_sweep("planner=rrt,est;bias=none,clone,weight,rebranch;epsilon=0,0.1,0.5")
    labels = [c.label for c in cfgs]
    assert labels == ["rrt-none-0", "rrt-clone-0.1", "rrt-clone-0.5", "rrt-rebranch-0.1", "rrt-rebranch-0.5",
                      "est-none-0", "est-weight-0.1", "est-weight-0.5", "est-rebranch-0.1", "est-rebranch-0.5"]


def test_empty_sweep_is_the_base_config():
    base = PlannerConfig(planner="est")
    assert parse_sweep("", base) == [base]


def test_parse_sweep_keeps_base_values():
    base = PlannerConfig(cov_weight=100.0, goal_bias=0.1)
    cfgs = parse_sweep("bias=clone;epsilon=0.8", base)
    assert len(cfgs) == 1 and cfgs[0].cov_weight == 100.0 and cfgs[0].epsilon == 0.8


@pytest.mark.parametrize("spec", ["planner", "speed=3", "epsilon=abc", "planner=rrt;bias=weight",
                                  "bias=clone;epsilon=0.99"])
def test_parse_sweep_errors(spec):
    with pytest.raises(SweepError):
        parse_sweep(spec)


def test_empty_quantiles_and_header_only_csv(tmp_path):
    stats = summarize(PlannerConfig(), [])
    assert stats.quantiles("plan_steps") == {q: None for q, _ in QUANTILES}
    export_results([], [], tmp_path)
    rows = list(csv.reader((tmp_path / "stats.csv").open()))
    assert rows == [stats_header()]
    assert (tmp_path / "trials.jsonl").read_text() == ""


def test_trajectory_rows(solved):
    env, mp = solved
    header, rows = trajectory_rows(env.model, mp)
    assert header == ["step", "robot0_x", "robot0_y", "robot0_r2sigma", "robot1_x", "robot1_y", "robot1_r2sigma"]
    assert len(rows) == mp.T + 1
    # root belief is 0.0025 I per robot
    assert rows[0][3] == pytest.approx(2 * math.sqrt(0.0025))
    for k, row in enumerate(rows):
        lam = np.linalg.eigvalsh(mp.gammas[k][2:, 2:])[-1]
        assert row[6] == pytest.approx(2 * math.sqrt(lam))
        assert row[4:6] == pytest.approx(list(mp.states[1][k]))


def test_run_batch_seeds_and_determinism(tmp_path):
    env = near_env()
    cfgs = parse_sweep("planner=rrt,est;bias=none,rebranch;epsilon=0.5", PlannerConfig(goal_bias=0.5,
                                                                                     max_iterations=60))
    runs = []
    for d in ("a", "b"):
        stats, records = run_batch(env, cfgs, 3, seed_base=10)
        assert [r.seed for r in records] == [10, 11, 12] * len(cfgs)
        export_results(stats, records, tmp_path / d, env.model)
        runs.append(tmp_path / d)
    for name in ("stats.csv", "trials.jsonl"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()
    trajs = sorted(p.name for p in (runs[0] / "trajectories").iterdir())
    assert trajs == sorted(p.name for p in (runs[1] / "trajectories").iterdir())
    first = json.loads((runs[0] / "trials.jsonl").read_text().splitlines()[0])
    assert "elapsed" not in first and set(first["rejections"]) == {"obstacle", "robot_robot", "cl", "numeric"}


def test_plan_file_round_trip(solved, tmp_path):
    env, mp = solved
    save_plan(tmp_path / "p.json", env, mp, {"seed": 0})
    env2, mp2, meta = load_plan(tmp_path / "p.json")
    assert meta == {"seed": 0}
    for a, b in zip(mp.controls + mp.states, mp2.controls + mp2.states):
        np.testing.assert_array_equal(a, b)
    assert mp2.schedule.steps == mp.schedule.steps
    np.testing.assert_array_equal(mp2.gammas, mp.gammas)


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(schema="x"),
    lambda d: d.pop("controls"),
    lambda d: d["states"][0].pop(),
    lambda d: d["schedule"].append([5]),
])
def test_plan_file_errors(solved, mutate):
    env, mp = solved
    doc = plan_to_dict(env, mp)
    mutate(doc)
    with pytest.raises(ConfigError):
        plan_from_dict(doc)


def test_cli_plan_validate_round_trip(env_file, tmp_path, capsys):
    out = tmp_path / "out"
    args = [str(env_file), "--goal-bias", "0.5", "--max-iterations", "50", "--rollouts", "2000", "--out", str(out)]
    assert main(["plan", *args]) == EXIT_OK
    assert (out / "plan.json").is_file() and (out / "trajectory.csv").is_file()
    assert main(["validate", str(out / "plan.json"), "--rollouts", "2000"]) == EXIT_OK
    doc = json.loads((out / "plan.json").read_text())
    doc["controls"][0][0][0] += 0.05
    (out / "plan.json").write_text(json.dumps(doc))
    assert main(["validate", str(out / "plan.json")]) == EXIT_INVALID
    assert "re-validation failed" in capsys.readouterr().out


def test_cli_exit_codes(env_file, tmp_path):
    assert main(["plan", str(env_file), "--max-iterations", "0"]) == EXIT_NO_PLAN
    assert main(["plan", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["plan", str(env_file), "--bias", "weight", "--epsilon", "0.5"]) == EXIT_CONFIG
    assert main(["bench", str(env_file), "--sweep", "speed=1", "--out", str(tmp_path / "b")]) == EXIT_CONFIG
    assert main(["validate", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main(["plan"])


def test_cli_bench_outputs(env_file, tmp_path):
    out = tmp_path / "bench"
    code = main(["bench", str(env_file), "--trials", "2", "--sweep", "planner=rrt;bias=none,clone;epsilon=0.3",
                 "--goal-bias", "0.5", "--max-iterations", "50", "--out", str(out)])
    assert code == EXIT_OK
    rows = list(csv.DictReader((out / "stats.csv").open()))
    assert [r["label"] for r in rows] == ["rrt-none-0", "rrt-clone-0.3"]
    assert len((out / "trials.jsonl").read_text().splitlines()) == 4


def test_cli_check_theorems_small():
    assert main(["check-theorems", "--cases", "20", "--samples", "20000"]) == EXIT_OK

import math

import numpy as np
import pytest

from tjunction_td3.cli_io import RunConfig
from tjunction_td3.env import DoneKind
from tjunction_td3.harness import (
    CURVE_COLUMNS,
    EVAL_COLUMNS,
    EpisodeResult,
    EvalReport,
    ScenarioTable,
    ci95,
    eval_csv_text,
    named_scenario,
    random_baseline,
    read_eval_csv,
    run_protocol,
    sweep,
    train,
    write_eval_csv,
)
from tjunction_td3.world_sim import ScenarioConfig

TINY = dict(hidden_units=8, hidden_layers=1, batch=4, exploration_steps=30, max_steps=40, buffer_capacity=100,
            episodes=3, veh=2, ped=2)
STAND_STILL = np.array([-1.0, 0.0, 1.0])  # no throttle, full brake


def test_scaled_densities():
    assert ScenarioTable().densities == [(4, 4), (8, 8), (12, 12), (16, 16), (18, 18)]
    assert ScenarioTable(k=1.0).densities == [(100, 100), (200, 200), (300, 300), (400, 400), (450, 450)]
    assert ScenarioTable(k=0.0).densities == [(0, 0)] * 5
    names = [s.name for s in ScenarioTable().scenarios()]
    assert names == ["density1", "density2", "density3", "density4", "density5"]


def test_named_scenarios():
    assert (named_scenario("desk").veh, named_scenario("desk").ped) == (4, 2)
    assert (named_scenario("density5").veh, named_scenario("density5").ped) == (18, 18)
    with pytest.raises(ValueError, match="unknown scenario"):
        named_scenario("rush-hour")


def test_ci95_formula():
    v = [1.0, 2.0, 3.0, 4.0]
    assert ci95(v) == pytest.approx(1.96 * math.sqrt(5.0 / 3.0) / 2.0, abs=1e-15)
    assert ci95([2.0, 2.0]) == 0.0
    with pytest.raises(ValueError):
        ci95([1.0])


def test_failed_episode_counts_full_horizon_delay():
    timeout = EpisodeResult.from_episode(500, DoneKind.TIMEOUT, 0.0, 0.1, 500)
    crash = EpisodeResult.from_episode(37, DoneKind.COLLISION, -100.0, 0.1, 500)
    goal = EpisodeResult.from_episode(120, DoneKind.GOAL, 90.0, 0.1, 500)
    assert timeout.travel_delay == crash.travel_delay == 50.0
    assert goal.travel_delay == pytest.approx(12.0)
    assert (timeout.collisions, crash.collisions, goal.collisions) == (0, 1, 0)


def test_single_repeat_is_rejected():
    with pytest.raises(ValueError, match="repeats"):
        run_protocol(lambda o: STAND_STILL, RunConfig(), ScenarioConfig(veh=0, ped=0), 1, 1)
    with pytest.raises(ValueError):
        EvalReport.from_results("x", [[EpisodeResult(1, DoneKind.GOAL, 0.0, 0, 0.1)]])


def test_never_moving_policy_in_empty_world():
    rep = run_protocol(lambda o: STAND_STILL, RunConfig(), ScenarioConfig(veh=0, ped=0, name="empty"), 2, 3)
    assert rep.repeat_delay == [50.0, 50.0, 50.0]
    assert rep.mean_delay == 50.0 and rep.ci95_delay == 0.0
    assert rep.mean_collisions == 0.0 and rep.goal_rate == 0.0


def test_random_baseline_is_deterministic():
    s = ScenarioConfig(veh=4, ped=4, name="s")
    a = random_baseline(s, episodes=2, repeats=2, seed=3)
    b = random_baseline(s, episodes=2, repeats=2, seed=3)
    assert a.results == b.results and a.repeat_delay == b.repeat_delay


def test_eval_csv_round_trip_recomputes_ci(tmp_path):
    reps = [EvalReport.from_results("a", [[EpisodeResult(10, DoneKind.GOAL, 1.0, 0, 1.0 + r)] for r in range(4)]),
            EvalReport.from_results("b", [[EpisodeResult(5, DoneKind.COLLISION, -9.0, 1, 50.0)],
                                          [EpisodeResult(9, DoneKind.GOAL, 9.0, 0, 0.9)]])]
    path = tmp_path / "eval.csv"
    write_eval_csv(reps, path)
    parsed = read_eval_csv(path)
    assert list(parsed) == ["a", "b"]
    for rep in reps:
        entry = parsed[rep.scenario]
        assert entry["summary"]["ci95_delay_s"] == ci95(entry["delay"]) == rep.ci95_delay
        assert entry["summary"]["ci95_collisions"] == ci95(entry["collisions"])
        assert entry["summary"]["mean_delay_s"] == rep.mean_delay
    assert path.read_text().splitlines()[0] == ",".join(EVAL_COLUMNS)


def test_empty_sweep_writes_header_only(tmp_path):
    out = tmp_path / "sweep.csv"
    reps = sweep(None, [], policy=lambda o: STAND_STILL, cfg=RunConfig(), out_csv=out)
    assert reps == [] and out.read_text() == ",".join(EVAL_COLUMNS) + "\n"
    assert eval_csv_text([]) == out.read_text()


def test_sweep_needs_a_policy():
    with pytest.raises(ValueError):
        sweep(None, [])


def test_training_zero_episodes_writes_header(tmp_path):
    res = train(RunConfig(**{**TINY, "episodes": 0}), seed=0, out_dir=tmp_path)
    assert res.curve.read_text() == ",".join(CURVE_COLUMNS) + "\n"
    assert res.checkpoint.exists() and (tmp_path / "config.json").exists()


def test_training_curve_is_byte_identical(tmp_path):
    a = train(RunConfig(**TINY), seed=4, out_dir=tmp_path / "a")
    b = train(RunConfig(**TINY), seed=4, out_dir=tmp_path / "b")
    assert a.curve.read_bytes() == b.curve.read_bytes()
    rows = a.rows
    assert [r["episode"] for r in rows] == [1, 2, 3]
    assert rows[-1]["ma50_return"] == pytest.approx(np.mean([r["return"] for r in rows]))
    c = train(RunConfig(**TINY), seed=5, out_dir=tmp_path / "c")
    assert c.curve.read_bytes() != a.curve.read_bytes()


def test_evaluate_checkpoint_is_deterministic(tmp_path):
    from tjunction_td3.harness import evaluate

    res = train(RunConfig(**TINY), seed=0, out_dir=tmp_path)
    s = ScenarioConfig(veh=2, ped=2, name="s")
    a = evaluate(res.checkpoint, s, episodes=2, repeats=2, seed=1)
    b = evaluate(res.checkpoint, s, episodes=2, repeats=2, seed=1)
    assert a.results == b.results

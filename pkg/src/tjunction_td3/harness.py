"""Training loop, evaluation protocol, density sweeps and the random-action control."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .cli_io import (
    CheckpointData,
    RunConfig,
    atomic_write_text,
    load_checkpoint,
    save_checkpoint,
    save_config,
)
from .env import DoneKind, TJunctionEnv, observation_size, write_trajectory_csv
from .td3_agent import ACTION_SIZE, ReplayBuffer, Td3Agent, Transition, to_env_action
from .world_sim import ScenarioConfig

MA_WINDOW = 50
CURVE_COLUMNS = ("episode", "steps", "return", "outcome", "ma50_return")
EVAL_COLUMNS = ("scenario", "repeat", "mean_delay_s", "mean_collisions", "ci95_delay_s", "ci95_collisions")
PAPER_DENSITIES = ((100, 100), (200, 200), (300, 300), (400, 400), (450, 450))  # (ped, veh)

Policy = Callable[[np.ndarray], np.ndarray]


def episode_seed(*keys: int) -> int:
    """Stable 32-bit seed derived from a tuple of integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# ---------------------------------------------------------------- result types


@dataclass(frozen=True)
class EpisodeResult:
    steps: int
    outcome: DoneKind
    total_return: float
    collisions: int
    travel_delay: float

    @classmethod
    def from_episode(cls, steps: int, outcome: DoneKind, total_return: float, dt: float,
                     max_steps: int) -> "EpisodeResult":
        delay = steps * dt if outcome is DoneKind.GOAL else max_steps * dt
        return cls(steps, outcome, total_return, int(outcome is DoneKind.COLLISION), delay)


def ci95(values: Sequence[float]) -> float:
    """1.96 times the sample standard deviation over sqrt(n)."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        raise ValueError("a confidence interval needs at least two repeats")
    return float(1.96 * np.std(v, ddof=1) / math.sqrt(len(v)))


@dataclass
class EvalReport:
    scenario: str
    episodes: int
    repeats: int
    repeat_delay: list[float]
    repeat_collisions: list[float]
    mean_delay: float
    ci95_delay: float
    mean_collisions: float
    ci95_collisions: float
    goal_rate: float
    results: list[EpisodeResult] = field(default_factory=list, repr=False)

    @classmethod
    def from_results(cls, scenario: str, results: list[list[EpisodeResult]]) -> "EvalReport":
        repeats = len(results)
        if repeats < 2:
            raise ValueError(f"evaluation needs repeats >= 2, got {repeats}")
        delay = [float(np.mean([r.travel_delay for r in rep])) for rep in results]
        coll = [float(np.mean([r.collisions for r in rep])) for rep in results]
        flat = [r for rep in results for r in rep]
        return cls(scenario, len(results[0]), repeats, delay, coll, float(np.mean(delay)), ci95(delay),
                   float(np.mean(coll)), ci95(coll),
                   float(np.mean([r.outcome is DoneKind.GOAL for r in flat])), flat)


@dataclass(frozen=True)
class ScenarioTable:
    """Five (ped, veh) density levels scaled by ``k`` and rounded up."""

    k: float = 1.0 / 25.0
    base: tuple[tuple[int, int], ...] = PAPER_DENSITIES

    @property
    def densities(self) -> list[tuple[int, int]]:
        # the tiny epsilon keeps exact products like 100 * (1/25) from ceiling to 5
        return [(math.ceil(p * self.k - 1e-9), math.ceil(v * self.k - 1e-9)) for p, v in self.base]

    def scenarios(self, template: ScenarioConfig = ScenarioConfig()) -> list[ScenarioConfig]:
        return [replace(template, ped=p, veh=v, name=f"density{i + 1}")
                for i, (p, v) in enumerate(self.densities)]


def named_scenario(name: str, template: ScenarioConfig = ScenarioConfig()) -> ScenarioConfig:
    """Scenarios addressable from the command line: desk, empty and density1..density5."""
    if name == "desk":
        return replace(template, veh=4, ped=2, name="desk")
    if name == "empty":
        return replace(template, veh=0, ped=0, name="empty")
    table = {s.name: s for s in ScenarioTable().scenarios(template)}
    if name not in table:
        raise ValueError(f"unknown scenario '{name}' (expected desk, empty or density1..density5)")
    return table[name]


# -------------------------------------------------------------------- episodes


def make_env(cfg: RunConfig, scenario: Optional[ScenarioConfig] = None, record: bool = False) -> TJunctionEnv:
    return TJunctionEnv(scenario or cfg.scenario_config(), cfg.reward(), cfg.obs_mode, cfg.max_steps,
                        cfg.goal_radius, record)


def run_episode(env: TJunctionEnv, policy: Policy, seed: int) -> EpisodeResult:
    obs = env.reset(seed=seed)
    total, steps = 0.0, 0
    while True:
        out = env.step(to_env_action(policy(obs)))
        total += out.reward.total
        steps += 1
        if out.done_kind.terminal:
            return EpisodeResult.from_episode(steps, out.done_kind, total, env.scenario.dt, env.max_steps)


def run_protocol(policy: Policy, cfg: RunConfig, scenario: ScenarioConfig, episodes: int = 10,
                 repeats: int = 10, seed: int = 0) -> EvalReport:
    """``repeats`` blocks of ``episodes`` episodes; episode seeds depend only on (seed, repeat, index)."""
    if repeats < 2:
        raise ValueError(f"evaluation needs repeats >= 2, got {repeats}")
    if episodes < 1:
        raise ValueError(f"evaluation needs episodes >= 1, got {episodes}")
    env = make_env(cfg, scenario)
    results = [[run_episode(env, policy, episode_seed(seed, r, e)) for e in range(episodes)]
               for r in range(repeats)]
    return EvalReport.from_results(scenario.name, results)


def actor_policy(agent: Td3Agent) -> Policy:
    return lambda obs: agent.select_action(obs, explore=False)


def random_policy(seed: int) -> Policy:
    rng = np.random.default_rng(seed)
    return lambda obs: rng.uniform(-1.0, 1.0, size=ACTION_SIZE)


def _resolve(checkpoint) -> CheckpointData:
    return checkpoint if isinstance(checkpoint, CheckpointData) else load_checkpoint(checkpoint)


def evaluate(checkpoint, scenario: ScenarioConfig, episodes: int = 10, repeats: int = 10,
             seed: int = 0) -> EvalReport:
    """Greedy-policy evaluation of a checkpoint (path or loaded data)."""
    ck = _resolve(checkpoint)
    return run_protocol(actor_policy(ck.agent), ck.config, scenario, episodes, repeats, seed)


def random_baseline(scenario: ScenarioConfig, episodes: int = 10, seed: int = 0, repeats: int = 10,
                    cfg: RunConfig = RunConfig()) -> EvalReport:
    """Same protocol as ``evaluate`` with uniform-random raw actions."""
    return run_protocol(random_policy(episode_seed(seed, 0xBA5E)), cfg, scenario, episodes, repeats, seed)


def sweep(checkpoint, table: ScenarioTable | Sequence[ScenarioConfig] = ScenarioTable(), episodes: int = 10,
          repeats: int = 10, seed: int = 0, out_csv: Optional[str | Path] = None,
          policy: Optional[Policy] = None, cfg: Optional[RunConfig] = None) -> list[EvalReport]:
    """Evaluate every scenario in order. ``checkpoint`` may be None when ``policy`` and ``cfg`` are given."""
    if checkpoint is not None:
        ck = _resolve(checkpoint)
        cfg = ck.config
        policy = actor_policy(ck.agent)
    if policy is None or cfg is None:
        raise ValueError("sweep needs a checkpoint or an explicit policy and config")
    scenarios = table.scenarios(cfg.scenario_config()) if isinstance(table, ScenarioTable) else list(table)
    reports = [run_protocol(policy, cfg, s, episodes, repeats, seed) for s in scenarios]
    if out_csv is not None:
        write_eval_csv(reports, out_csv)
    return reports


# ------------------------------------------------------------------------ CSVs


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def eval_csv_text(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_COLUMNS)
    for rep in reports:
        for i, (d, c) in enumerate(zip(rep.repeat_delay, rep.repeat_collisions)):
            w.writerow((rep.scenario, i, _fmt(d), _fmt(c), "", ""))
        w.writerow((rep.scenario, "summary", _fmt(rep.mean_delay), _fmt(rep.mean_collisions),
                    _fmt(rep.ci95_delay), _fmt(rep.ci95_collisions)))
    return buf.getvalue()


def write_eval_csv(reports: Sequence[EvalReport], path: str | Path) -> None:
    atomic_write_text(path, eval_csv_text(reports))


def read_eval_csv(path: str | Path) -> dict[str, dict]:
    """Per-scenario repeat means and summary fields, parsed back from an eval CSV."""
    out: dict[str, dict] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            entry = out.setdefault(row["scenario"], {"delay": [], "collisions": []})
            if row["repeat"] == "summary":
                entry["summary"] = {k: float(row[k]) for k in EVAL_COLUMNS[2:]}
            else:
                entry["delay"].append(float(row["mean_delay_s"]))
                entry["collisions"].append(float(row["mean_collisions"]))
    return out


def curve_csv_text(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in rows:
        w.writerow((r["episode"], r["steps"], _fmt(r["return"]), r["outcome"], _fmt(r["ma50_return"])))
    return buf.getvalue()


def read_curve_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"episode": int(r["episode"]), "steps": int(r["steps"]), "return": float(r["return"]),
                 "outcome": r["outcome"], "ma50_return": float(r["ma50_return"])} for r in csv.DictReader(fh)]


# -------------------------------------------------------------------- training


@dataclass
class TrainResult:
    checkpoint: Path
    curve: Path
    rows: list[dict]
    agent: Td3Agent


def _append_row(rows: list[dict], steps: int, ret: float, outcome: DoneKind) -> None:
    returns = [r["return"] for r in rows[-(MA_WINDOW - 1):]] + [ret]
    rows.append({"episode": len(rows) + 1, "steps": steps, "return": ret, "outcome": outcome.value,
                 "ma50_return": float(np.mean(returns))})


def train(cfg: RunConfig, seed: Optional[int] = None, out_dir: Optional[str | Path] = None,
          resume: Optional[str | Path] = None, log: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Run ``cfg.episodes`` episodes, learning after every environment step once warm-up is over.

    Writes ``curve.csv``, ``config.json``, ``checkpoint_final.json`` and a
    resumable ``checkpoint_epNNNN.json`` every ``cfg.checkpoint_every`` episodes.
    """
    seed = cfg.seed if seed is None else seed
    cfg = replace(cfg, seed=seed) if seed != cfg.seed else cfg
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curve_path = out / "curve.csv"
    env = make_env(cfg)
    obs_size = observation_size(cfg.obs_mode)
    rows: list[dict] = []
    if resume is not None:
        ck = load_checkpoint(resume)
        if replace(ck.config, out_dir="", episodes=0) != replace(cfg, out_dir="", episodes=0):
            raise ValueError(f"checkpoint {resume} was written with a different configuration")
        agent, start = ck.agent, ck.episode
        buffer = ck.buffer if ck.buffer is not None else ReplayBuffer(obs_size, cfg.buffer_capacity)
        if curve_path.exists():
            rows = read_curve_csv(curve_path)[:start]
        if len(rows) != start:
            raise ValueError(f"{curve_path} holds {len(rows)} rows, checkpoint is at episode {start}")
    else:
        agent = Td3Agent.create(obs_size, cfg.td3(), seed=episode_seed(seed, 1))
        buffer = ReplayBuffer(obs_size, cfg.buffer_capacity)
        start = 0
    save_config(cfg, out / "config.json")
    atomic_write_text(curve_path, curve_csv_text(rows))
    batch = cfg.batch
    for ep in range(start, cfg.episodes):
        obs = env.reset(seed=episode_seed(seed, 2, ep))
        total, steps = 0.0, 0
        while True:
            action = agent.select_action(obs, explore=True)
            outcome = env.step(to_env_action(action))
            buffer.push(Transition(obs, action, outcome.reward.total, outcome.observation, outcome.done_kind))
            obs = outcome.observation
            total += outcome.reward.total
            steps += 1
            if not agent.warming_up and buffer.size >= batch:
                agent.train_step(buffer)
            if outcome.done_kind.terminal:
                break
        _append_row(rows, steps, total, outcome.done_kind)
        if log is not None:
            r = rows[-1]
            log(f"episode {r['episode']} steps {steps} return {total:.2f} {r['outcome']} ma50 {r['ma50_return']:.2f}")
        with open(curve_path, "a", newline="") as fh:
            fh.write(curve_csv_text(rows[-1:]).split("\n", 1)[1])
        if (ep + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_ep{ep + 1:04d}.json", cfg, agent, ep + 1, buffer)
    final = out / "checkpoint_final.json"
    save_checkpoint(final, cfg, agent, max(cfg.episodes, start), buffer)
    return TrainResult(final, curve_path, rows, agent)


def record_episode(policy: Policy, cfg: RunConfig, scenario: ScenarioConfig, seed: int,
                   path: str | Path) -> EpisodeResult:
    """Run one episode with per-tick recording and dump it as a trajectory CSV."""
    env = make_env(cfg, scenario, record=True)
    result = run_episode(env, policy, seed)
    write_trajectory_csv(env.trajectory, path, scenario)
    return result

"""Command-line entry point: train, eval, sweep, baseline, gradcheck, replay."""

from __future__ import annotations

import argparse
import sys
import time
from typing import Optional, Sequence

from . import harness
from .cli_io import CheckpointError, ConfigError, RunConfig, load_checkpoint, load_config
from .neural import gradcheck
from .replay import TrajectoryError, read_trajectory, render_frames
from .world_sim import SpawnError

GRADCHECK_TOLERANCE = 1e-4


class CliError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tjunction-td3", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an agent and write curve.csv plus checkpoints")
    t.add_argument("--config", required=True, help="flat JSON config ({} gives the defaults)")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    t.add_argument("--resume", default=None, help="checkpoint to resume from")
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("eval", help="evaluate a checkpoint on one scenario")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scenario", default="desk")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--repeats", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default=None, help="eval CSV path")
    e.add_argument("--trajectory", default=None, help="record one episode to this CSV")

    s = sub.add_parser("sweep", help="evaluate a checkpoint over the five density scenarios")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--scale", type=float, default=1.0 / 25.0, help="density scale factor k")
    s.add_argument("--episodes", type=int, default=10)
    s.add_argument("--repeats", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None, help="combined eval CSV path")

    b = sub.add_parser("baseline", help="uniform-random actions under the evaluation protocol")
    b.add_argument("--scenario", default="desk")
    b.add_argument("--episodes", type=int, default=10)
    b.add_argument("--repeats", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--config", default=None, help="optional config for map and reward settings")
    b.add_argument("--out", default=None)
    b.add_argument("--trajectory", default=None)

    sub.add_parser("gradcheck", help="finite-difference check of the backprop code")

    r = sub.add_parser("replay", help="print a text frame per tick of a trajectory CSV")
    r.add_argument("--trajectory", required=True)
    r.add_argument("--every", type=int, default=1, help="render every N-th tick")
    return p


def _print_reports(reports) -> None:
    for rep in reports:
        print(f"{rep.scenario}: delay {rep.mean_delay:.3f} +- {rep.ci95_delay:.3f} s, "
              f"collisions {rep.mean_collisions:.3f} +- {rep.ci95_collisions:.3f}, goal rate {rep.goal_rate:.3f} "
              f"({rep.repeats} x {rep.episodes} episodes)")


def _emit_csv(reports, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(harness.eval_csv_text(reports))
    else:
        harness.write_eval_csv(reports, out)
        print(f"wrote {out}")


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    start = time.time()
    log = None if args.quiet else (lambda line: print(line, flush=True))
    res = harness.train(cfg, seed=args.seed, out_dir=args.out, resume=args.resume, log=log)
    print(f"trained {len(res.rows)} episodes in {time.time() - start:.1f} s; "
          f"curve {res.curve}; checkpoint {res.checkpoint}")
    return 0


def _cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    scenario = harness.named_scenario(args.scenario, ck.config.scenario_config())
    report = harness.evaluate(ck, scenario, args.episodes, args.repeats, args.seed)
    _print_reports([report])
    _emit_csv([report], args.out)
    if args.trajectory:
        harness.record_episode(harness.actor_policy(ck.agent), ck.config, scenario,
                               harness.episode_seed(args.seed, 0, 0), args.trajectory)
        print(f"wrote {args.trajectory}")
    return 0


def _cmd_sweep(args) -> int:
    if args.scale <= 0:
        raise CliError(f"--scale must be positive, got {args.scale}")
    reports = harness.sweep(args.checkpoint, harness.ScenarioTable(k=args.scale), args.episodes,
                            args.repeats, args.seed)
    _print_reports(reports)
    _emit_csv(reports, args.out)
    return 0


def _cmd_baseline(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    scenario = harness.named_scenario(args.scenario, cfg.scenario_config())
    report = harness.random_baseline(scenario, args.episodes, args.seed, args.repeats, cfg)
    _print_reports([report])
    _emit_csv([report], args.out)
    if args.trajectory:
        harness.record_episode(harness.random_policy(args.seed), cfg, scenario,
                               harness.episode_seed(args.seed, 0, 0), args.trajectory)
        print(f"wrote {args.trajectory}")
    return 0


def _cmd_gradcheck(args) -> int:
    start = time.time()
    results = gradcheck()
    worst = max(r["max_rel_error"] for r in results)
    for r in results:
        sizes = "-".join(str(n) for n in r["layer_sizes"])
        print(f"seed {r['seed']} {sizes} ({r['activation']}): max relative error {r['max_rel_error']:.3e}")
    ok = worst < GRADCHECK_TOLERANCE
    print(f"max relative error {worst:.3e} over {len(results)} networks in {time.time() - start:.1f} s: "
          f"{'ok' if ok else 'FAILED'} (tolerance {GRADCHECK_TOLERANCE:g})")
    return 0 if ok else 1


def _cmd_replay(args) -> int:
    if args.every < 1:
        raise CliError("--every must be >= 1")
    meta, rows = read_trajectory(args.trajectory)
    for frame in render_frames(meta, rows[::args.every]):
        print(frame)
        print()
    return 0


COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "sweep": _cmd_sweep, "baseline": _cmd_baseline,
            "gradcheck": _cmd_gradcheck, "replay": _cmd_replay}


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except BrokenPipeError:
        return 0
    except (CliError, ConfigError, CheckpointError, TrajectoryError, SpawnError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()

"""Command-line interface.

Subcommands::

    influencegrid train <config>                 train per run.seeds, write artifacts
    influencegrid eval <checkpoint> <config>     frozen-policy evaluation
    influencegrid metrics <logdir>               recompute metrics from trajectory logs
    influencegrid boxdemo <config>               box-trapped train + open-rate report

Exit codes: 0 success, 1 configuration error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, harness, runio
from .config import load_config, with_overrides
from .errors import ConfigError, ContractError, NumericError
from .metrics import summarize


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, action="append", default=None,
                   help="override run.seeds (repeatable)")
    p.add_argument("--out", type=str, default=None, help="override run.out")
    p.add_argument("--workers", type=int, default=None,
                   help="override train.workers")
    p.add_argument("--deterministic", action="store_true",
                   help="force single-threaded (reproducible) execution")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="influencegrid",
        description="multi-agent gridworld training with social-influence rewards")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training experiment in a config")
    p.add_argument("config", type=Path)
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint without training")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("config", type=Path)
    p.add_argument("--episodes", type=int, default=None,
                   help="override run.eval_episodes")
    _add_common(p)

    p = sub.add_parser("metrics", help="recompute windowed metrics from logs")
    p.add_argument("logdir", type=Path)

    p = sub.add_parser("boxdemo", help="box-trapped demonstration run")
    p.add_argument("config", type=Path)
    _add_common(p)
    return parser


def _load(args) -> "config.ExperimentConfig":
    cfg = load_config(args.config)
    workers = 1 if getattr(args, "deterministic", False) else args.workers
    return with_overrides(cfg, seeds=args.seed, out=args.out, workers=workers)


def cmd_train(args) -> int:
    cfg = _load(args)
    results = harness.run_experiment(cfg)
    for res in results:
        final = res.summaries[-1] if res.summaries else None
        reward = final.collective_reward if final else float("nan")
        where = res.out_dir if res.out_dir else "(not written)"
        print(f"seed {res.seed}: {len(res.log.steps)} steps, "
              f"last-window collective reward {reward:g}, artifacts {where}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    params = checkpoint.load_agents(args.checkpoint)
    episodes = args.episodes if args.episodes is not None else cfg.run.eval_episodes
    seed = cfg.run.seeds[0] if args.seed is None else args.seed[0]
    summaries = harness.evaluate(params, cfg, episodes, seed=seed)
    rewards = [s.collective_reward for s in summaries]
    print(f"{len(summaries)} episodes, collective reward "
          f"mean {np.mean(rewards):g} min {np.min(rewards):g} max {np.max(rewards):g}")
    opened = [s.metrics.get("box_opened", float("nan")) for s in summaries]
    if not all(np.isnan(opened)):
        print(f"box opened in {np.nansum(opened):.0f}/{len(summaries)} episodes")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        runio.write_metrics(out / "eval_metrics.csv", summaries)
        print(f"wrote {out / 'eval_metrics.csv'}")
    return 0


def cmd_metrics(args) -> int:
    logdir = args.logdir
    seed_dirs = sorted(d for d in logdir.glob("seed_*") if d.is_dir())
    if not seed_dirs:
        seed_dirs = [logdir]
    for d in seed_dirs:
        traj = d / "trajectory.csv"
        cfg_path = d / "config.txt"
        if not traj.exists() or not cfg_path.exists():
            raise ConfigError(f"{d} has no trajectory.csv/config.txt pair")
        cfg = load_config(cfg_path)
        env = harness.Env(cfg.env)
        log = runio.read_trajectory(traj)
        summaries = summarize(log, cfg.train.metrics_window,
                              n_actions=env.n_actions,
                              n_symbols=cfg.comm_symbols)
        runio.write_metrics(d / "metrics.csv", summaries)
        print(f"{d}: {len(summaries)} windows recomputed")
    return 0


def cmd_boxdemo(args) -> int:
    cfg = _load(args)
    if cfg.env.kind != "boxtrapped":
        raise ConfigError("boxdemo needs env.kind = boxtrapped")
    results = harness.run_experiment(cfg)
    opened_rates = []
    for res in results:
        summaries = harness.evaluate(res.final_params, cfg, cfg.run.eval_episodes,
                                     seed=res.seed + 10_000)
        opened = sum(s.metrics["box_opened"] for s in summaries)
        steps = [s.metrics["box_open_step"] for s in summaries
                 if not np.isnan(s.metrics["box_open_step"])]
        rate = opened / len(summaries)
        opened_rates.append(rate)
        mean_step = f", mean open step {np.mean(steps):.1f}" if steps else ""
        print(f"seed {res.seed}: box opened in {opened:.0f}/{len(summaries)} "
              f"episodes ({100 * rate:.0f}%){mean_step}")
    print(f"overall open rate: {100 * float(np.mean(opened_rates)):.0f}% "
          f"(beta={cfg.influence.beta:g}, variant={cfg.influence.variant})")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "metrics": cmd_metrics,
            "boxdemo": cmd_boxdemo}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

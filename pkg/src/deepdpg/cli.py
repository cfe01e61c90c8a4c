"""Command-line entry point: ``deepdpg {train,baseline,score,diag}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .ddpg import Agent
from .envs import ENVIRONMENTS, make_env
from .errors import ConfigError, InsufficientDataError


def _json_dict(text: str) -> dict:
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"not valid JSON: {exc}") from None
    if not isinstance(value, dict):
        raise argparse.ArgumentTypeError("expected a JSON object")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepdpg", description="DDPG training, baselines and diagnostics")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one or more seeds")
    t.add_argument("--env", choices=sorted(ENVIRONMENTS))
    t.add_argument("--config", type=Path, help="experiment config JSON")
    t.add_argument("--seed", type=int, action="append",
                   help="seed to run (repeatable); defaults to the config's seeds")
    t.add_argument("--no-target-net", action="store_true", help="bootstrap from the live networks")
    t.add_argument("--no-batchnorm", action="store_true", help="drop batch normalization")
    t.add_argument("--steps", type=int, help="override training.max_env_steps")
    t.add_argument("--training", type=_json_dict, help="JSON object of training overrides")
    t.add_argument("--record-wall-time", action="store_true",
                   help="fill the wall_time_s column (makes the CSV non-reproducible)")
    t.add_argument("--out", type=Path, required=True)

    b = sub.add_parser("baseline", help="random or iLQG-MPC reference returns")
    b.add_argument("--env", choices=sorted(ENVIRONMENTS), required=True)
    b.add_argument("--policy", choices=["random", "ilqg"], required=True)
    b.add_argument("--episodes", type=int, required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--config", type=Path, help="experiment config JSON (env_params, planner)")
    b.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("score", help="normalize training results against baselines")
    s.add_argument("--train-results", type=Path, required=True)
    s.add_argument("--baselines", type=Path, required=True)
    s.add_argument("--out", type=Path, help="scores CSV (default: <train-results>/scores.csv)")

    d = sub.add_parser("diag", help="diagnostics")
    dsub = d.add_subparsers(dest="diag", required=True)
    q = dsub.add_parser("qvr", help="predicted Q versus discounted return-to-go")
    q.add_argument("--checkpoint", type=Path, required=True)
    q.add_argument("--env", choices=sorted(ENVIRONMENTS), required=True)
    q.add_argument("--episodes", type=int, required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", type=Path, help="CSV path (default: next to the checkpoint)")
    return p


def _experiment(args) -> harness.ExperimentConfig:
    data = {}
    if args.config is not None:
        data = harness.load_config(args.config).to_dict()
    if args.env:
        if data.get("env", args.env) != args.env:
            data["env_params"] = {}
        data["env"] = args.env
    training = dict(data.get("training", {}))
    training.update(args.training or {})
    if args.steps is not None:
        training["max_env_steps"] = args.steps
    if args.no_target_net:
        training["use_target_networks"] = False
    if args.no_batchnorm:
        training["use_batch_norm"] = False
    data["training"] = training
    if args.seed:
        data["seeds"] = args.seed
    data["out_dir"] = str(args.out)
    return harness.ExperimentConfig.from_dict(data)


def cmd_train(args) -> int:
    config = _experiment(args)
    for path in harness.run_experiment(config, args.out, record_wall_time=args.record_wall_time):
        meta = json.loads((path / "run_meta.json").read_text())
        rows = harness.read_metrics(path)
        last = rows[-1]["eval_return_mean"] if rows else "n/a"
        print(f"{path}: {meta['steps']} steps, final eval return {last}")
        if meta["error"]:
            print(f"{path}: stopped early: {meta['error']}", file=sys.stderr)
            return 1
    return 0


def cmd_baseline(args) -> int:
    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    env_params, planner = {}, {}
    if args.config is not None:
        cfg = harness.load_config(args.config)
        if cfg.env == args.env:
            env_params, planner = cfg.env_params, cfg.planner
    path = harness.run_baseline(args.env, args.policy, args.episodes, args.out, args.seed, env_params, planner)
    print(f"{path}: mean return {harness.read_baseline(args.out, args.env, args.policy)!r}")
    return 0


def cmd_score(args) -> int:
    report = harness.score_runs(args.train_results, args.baselines)
    out = args.out or args.train_results / "scores.csv"
    harness.write_scores(report, out)
    print(f"env {report.env}: R_rand {report.r_rand!r}, R_ilqg {report.r_ilqg!r}")
    print(",".join(harness.SCORES_HEADER))
    for row in report.rows():
        print(",".join(harness._fmt(v) for v in row))
    return 0


def cmd_diag(args) -> int:
    agent, meta = Agent.load(args.checkpoint)
    env_params = meta.get("env_params", {}) if meta.get("env") == args.env else {}
    env = make_env(args.env, **env_params)
    if (env.obs_dim, env.act_dim) != (meta["obs_dim"], meta["act_dim"]):
        raise ConfigError(f"checkpoint dimensions do not match env {args.env}")
    records = harness.q_diagnostic(agent, env, args.episodes, args.seed)
    out = args.out or args.checkpoint.with_name("q_vs_return.csv")
    harness.write_q_diagnostic(records, out)
    print(f"{out}: {len(records)} points, pearson {harness.pearson(records):.4f}")
    return 0


COMMANDS = {"train": cmd_train, "baseline": cmd_baseline, "score": cmd_score, "diag": cmd_diag}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InsufficientDataError, FileNotFoundError) as exc:
        print(f"deepdpg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

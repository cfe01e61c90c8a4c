"""Long benchmark runs: the learning milestones, the target-network ablation,
the baselines they are normalized against, and the Q-value diagnostic.

Usage: ``python -m deepdpg.acceptance [baselines|pendulum|ablation|cartpole|qdiag|all ...]``

Results go to ``$DEEPDPG_ACCEPTANCE_DIR`` (default ``./acceptance_runs``). A run
whose ``run_meta.json`` already carries the same config hash is not repeated.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness
from .ddpg import Agent, TrainingConfig
from .envs import make_env

log = logging.getLogger(__name__)

PENDULUM_STEPS = 100_000
CARTPOLE_STEPS = 250_000
SEEDS = [0, 1, 2, 3, 4]
ABLATION_SEEDS = [0, 1, 2]
RANDOM_EPISODES = 100
ILQG_EPISODES = 10
QDIAG_EPISODES = 20


def results_dir() -> Path:
    return Path(os.environ.get("DEEPDPG_ACCEPTANCE_DIR", "acceptance_runs"))


def experiments() -> dict[str, harness.ExperimentConfig]:
    return {
        "pendulum": harness.ExperimentConfig(
            env="pendulum", training=TrainingConfig(max_env_steps=PENDULUM_STEPS), seeds=SEEDS),
        "pendulum_notarget": harness.ExperimentConfig(
            env="pendulum", training=TrainingConfig(max_env_steps=PENDULUM_STEPS, use_target_networks=False),
            seeds=ABLATION_SEEDS),
        "cartpole_swingup": harness.ExperimentConfig(
            env="cartpole_swingup", training=TrainingConfig(max_env_steps=CARTPOLE_STEPS), seeds=SEEDS),
    }


def is_done(run_dir: Path, config: harness.ExperimentConfig, seed: int) -> bool:
    meta_path = run_dir / "run_meta.json"
    if not (meta_path.exists() and (run_dir / "metrics.csv").exists()):
        return False
    meta = json.loads(meta_path.read_text())
    return meta.get("config_hash") == harness.run_meta(config, seed)["config_hash"] and not meta.get("error")


def run_experiment(name: str, root: Path | None = None) -> list[Path]:
    root = root or results_dir()
    config = experiments()[name]
    out = []
    for seed in config.seeds:
        run_dir = root / name / f"seed_{seed}"
        if is_done(run_dir, config, seed):
            log.info("%s seed %d: up to date", name, seed)
        else:
            log.info("%s seed %d: training %d steps", name, seed, config.training.max_env_steps)
            harness.run_training(config, seed, run_dir)
        out.append(run_dir)
    return out


def run_baselines(root: Path | None = None) -> Path:
    base = (root or results_dir()) / "baselines"
    for env_name in ("pendulum", "cartpole_swingup"):
        for policy, episodes in (("random", RANDOM_EPISODES), ("ilqg", ILQG_EPISODES)):
            path = harness.baseline_path(base, env_name, policy)
            stamp = path.with_suffix(".json")
            key = {"env": env_name, "policy": policy, "episodes": episodes, "seed": 0}
            if path.exists() and stamp.exists() and json.loads(stamp.read_text()) == key:
                continue
            log.info("baseline %s/%s: %d episodes", env_name, policy, episodes)
            harness.run_baseline(env_name, policy, episodes, base, seed=0)
            stamp.write_text(json.dumps(key) + "\n")
    return base


def best_final_run(name: str, root: Path | None = None) -> Path:
    runs = [(root or results_dir()) / name / f"seed_{s}" for s in experiments()[name].seeds]
    finals = {r: float(harness.read_metrics(r)[-1]["eval_return_mean"]) for r in runs}
    return max(finals, key=finals.get)


def run_qdiag(root: Path | None = None) -> Path:
    root = root or results_dir()
    run = best_final_run("pendulum", root)
    agent, _ = Agent.load(run / "checkpoint.json")
    records = harness.q_diagnostic(agent, make_env("pendulum"), QDIAG_EPISODES, seed=0)
    out = root / "qdiag"
    out.mkdir(parents=True, exist_ok=True)
    harness.write_q_diagnostic(records, out / "q_vs_return.csv")
    (out / "source.json").write_text(json.dumps({"run": run.name, "pearson": harness.pearson(records)}) + "\n")
    return out


JOBS = {
    "baselines": lambda: run_baselines(),
    "pendulum": lambda: run_experiment("pendulum"),
    "ablation": lambda: run_experiment("pendulum_notarget"),
    "qdiag": lambda: run_qdiag(),
    "cartpole": lambda: run_experiment("cartpole_swingup"),
}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="python -m deepdpg.acceptance")
    p.add_argument("jobs", nargs="*", default=["all"], choices=[*JOBS, "all"])
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    jobs = list(JOBS) if "all" in args.jobs else args.jobs
    for job in jobs:
        JOBS[job]()
    return 0


if __name__ == "__main__":
    sys.exit(main())

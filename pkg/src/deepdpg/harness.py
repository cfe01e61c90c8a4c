"""Experiment orchestration: training runs, baselines, scoring and diagnostics.

Every CSV written here depends only on the configuration and seeds, so a rerun
reproduces it byte for byte. Wall-clock time is kept out of the CSVs (the
``wall_time_s`` column stays empty unless explicitly requested) and is stored
in ``timing.json`` instead.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ddpg
from .ddpg import Agent, TrainingConfig
from .envs import make_env, random_policy_returns
from .errors import ConfigError, InsufficientDataError
from .planner import PlannerConfig, mpc_returns

log = logging.getLogger(__name__)

METRICS_HEADER = ["step", "episode", "eval_return_mean", "eval_return_std", "critic_loss",
                  "actor_objective_mean", "buffer_size", "wall_time_s"]
SCORES_HEADER = ["run", "seed", "final_return", "final_score", "best_eval_return", "best_eval_score"]
BASELINE_HEADER = ["episode", "return"]
QDIAG_HEADER = ["episode", "t", "q_predicted", "return_to_go"]
ABLATION_FLAGS = ("use_target_networks", "use_batch_norm")
EVAL_SEED_OFFSET = 10_000


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


@dataclass
class ExperimentConfig:
    env: str = "pendulum"
    env_params: dict = field(default_factory=dict)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    planner: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    eval_episodes: int = 10
    out_dir: str = "runs"

    def __post_init__(self):
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be non-empty and distinct")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        self.make_env()  # validates name and parameters
        PlannerConfig(**self.planner)

    def make_env(self):
        return make_env(self.env, **self.env_params)

    def planner_config(self, env) -> PlannerConfig:
        return PlannerConfig.for_env(env, **self.planner)

    def to_dict(self) -> dict:
        return {"env": self.env, "env_params": dict(self.env_params), "training": self.training.to_dict(),
                "planner": dict(self.planner), "seeds": list(self.seeds),
                "eval_episodes": self.eval_episodes, "out_dir": self.out_dir}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        if "training" in d:
            t = d["training"]
            d["training"] = t if isinstance(t, TrainingConfig) else TrainingConfig.from_dict(t)
        return cls(**d)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return ExperimentConfig.from_dict(data)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_meta(config: ExperimentConfig, seed: int) -> dict:
    full = config.to_dict()
    full.pop("out_dir")
    full["seeds"] = [seed]
    base = json.loads(canonical_json(full))
    for flag in ABLATION_FLAGS:
        base["training"].pop(flag)
    return {"env": config.env, "seed": seed, "config": full, "config_hash": config_hash(full),
            "base_config_hash": config_hash(base),
            "arm": {flag: getattr(config.training, flag) for flag in ABLATION_FLAGS}}


def evaluate(agent: Agent, env, episodes: int, seed: int) -> list[float]:
    """Noise-free undiscounted returns of the agent's greedy policy."""
    return ddpg.evaluate(agent, env, episodes, seed)


def run_training(config: ExperimentConfig, seed: int, out_dir, *, record_wall_time: bool = False) -> Path:
    """Train one seed, evaluating every ``eval_interval`` steps and at the end.

    Writes ``metrics.csv``, ``run_meta.json``, ``timing.json`` and the final
    ``checkpoint.json`` (+ ``.bin``) into ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env, eval_env = config.make_env(), config.make_env()
    cfg = config.training
    agent = Agent(env.obs_dim, env.act_dim, cfg, seed)
    eval_seed = seed + EVAL_SEED_OFFSET
    rows = []
    window = {"loss": [], "objective": []}
    t0 = time.perf_counter()

    def record(metrics):
        returns = evaluate(agent, eval_env, config.eval_episodes, eval_seed)
        loss = float(np.mean(window["loss"])) if window["loss"] else None
        obj = float(np.mean(window["objective"])) if window["objective"] else None
        wall = round(time.perf_counter() - t0, 3) if record_wall_time else None
        rows.append([metrics["step"], metrics["episode"], float(np.mean(returns)), float(np.std(returns)),
                     loss, obj, metrics["buffer_size"], wall])
        window["loss"].clear()
        window["objective"].clear()

    def hook(agent_, metrics):
        if metrics["updated"]:
            window["loss"].append(metrics["critic_loss"])
            window["objective"].append(metrics["actor_objective"])
        if metrics["step"] % cfg.eval_interval == 0 or metrics["step"] == cfg.max_env_steps:
            record(metrics)

    result = ddpg.train(agent, env, hooks=[hook])
    elapsed = time.perf_counter() - t0
    _write_csv(out / "metrics.csv", METRICS_HEADER, rows)
    meta = run_meta(config, seed)
    meta.update({"steps": agent.total_steps, "updates": agent.updates, "error": result.error})
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"wall_time_s": elapsed}) + "\n")
    agent.save(out / "checkpoint.json", {"env": config.env, "env_params": config.env_params})
    if result.error:
        log.error("seed %d stopped early: %s", seed, result.error)
    return out


def run_experiment(config: ExperimentConfig, out_dir=None, **kw) -> list[Path]:
    root = Path(out_dir or config.out_dir)
    return [run_training(config, s, root / f"seed_{s}", **kw) for s in config.seeds]


# baselines

def baseline_returns(env_name: str, policy: str, episodes: int, seed: int = 0,
                     env_params: dict | None = None, planner: dict | None = None) -> list[float]:
    env = make_env(env_name, **(env_params or {}))
    if policy == "random":
        return random_policy_returns(env, episodes, seed)
    if policy == "ilqg":
        return mpc_returns(env, episodes, seed, PlannerConfig.for_env(env, **(planner or {})))
    raise ConfigError(f"unknown baseline policy {policy!r}; choose random or ilqg")


def baseline_path(out_dir, env_name: str, policy: str) -> Path:
    return Path(out_dir) / f"{env_name}_{policy}.csv"


def run_baseline(env_name: str, policy: str, episodes: int, out_dir, seed: int = 0,
                 env_params: dict | None = None, planner: dict | None = None) -> Path:
    returns = baseline_returns(env_name, policy, episodes, seed, env_params, planner)
    path = baseline_path(out_dir, env_name, policy)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(path, BASELINE_HEADER, enumerate(returns))
    return path


def read_baseline(out_dir, env_name: str, policy: str) -> float:
    path = baseline_path(out_dir, env_name, policy)
    if not path.exists():
        raise InsufficientDataError(f"missing baseline file {path}")
    returns = [float(r["return"]) for r in _read_csv(path)]
    if not returns:
        raise InsufficientDataError(f"baseline file {path} is empty")
    return float(np.mean(returns))


# scoring

def normalize_scores(raw: float, r_rand: float, r_ilqg: float) -> float:
    """Affine map sending the random baseline to 0 and the planner to 1."""
    span = r_ilqg - r_rand
    if not math.isfinite(span) or span == 0.0:
        raise ConfigError(f"degenerate baselines: random {r_rand}, ilqg {r_ilqg}")
    return (raw - r_rand) / span


@dataclass
class RunScore:
    run: str
    seed: int
    final_return: float
    best_eval_return: float
    final_score: float | None = None
    best_eval_score: float | None = None


@dataclass
class ScoreReport:
    """Per-run scores plus the two aggregates over runs.

    ``final`` aggregates use each run's last evaluation; ``best_eval`` uses each
    run's best evaluation. R_av is the mean over runs, R_best the maximum.
    """

    env: str
    runs: list[RunScore]
    r_rand: float
    r_ilqg: float

    def _agg(self, attr, fn):
        vals = [getattr(r, attr) for r in self.runs]
        return None if not vals or any(v is None for v in vals) else float(fn(vals))

    @property
    def r_av(self) -> float | None:
        return self._agg("final_score", np.mean)

    @property
    def r_best(self) -> float | None:
        return self._agg("final_score", np.max)

    @property
    def r_av_best_eval(self) -> float | None:
        return self._agg("best_eval_score", np.mean)

    @property
    def r_best_best_eval(self) -> float | None:
        return self._agg("best_eval_score", np.max)

    def rows(self):
        for r in self.runs:
            yield [r.run, r.seed, r.final_return, r.final_score, r.best_eval_return, r.best_eval_score]
        yield ["R_av", "", self._agg("final_return", np.mean), self.r_av,
               self._agg("best_eval_return", np.mean), self.r_av_best_eval]
        yield ["R_best", "", self._agg("final_return", np.max), self.r_best,
               self._agg("best_eval_return", np.max), self.r_best_best_eval]


def find_runs(train_dir) -> list[Path]:
    return sorted(p.parent for p in Path(train_dir).rglob("run_meta.json"))


def read_metrics(run_dir) -> list[dict]:
    return _read_csv(Path(run_dir) / "metrics.csv")


def score_runs(train_dir, baselines_dir) -> ScoreReport:
    runs = find_runs(train_dir)
    if not runs:
        raise InsufficientDataError(f"no training runs under {train_dir}")
    metas = [json.loads((r / "run_meta.json").read_text()) for r in runs]
    envs = {m["env"] for m in metas}
    if len(envs) != 1:
        raise ConfigError(f"runs mix environments: {sorted(envs)}")
    env_name = envs.pop()
    r_rand = read_baseline(baselines_dir, env_name, "random")
    r_ilqg = read_baseline(baselines_dir, env_name, "ilqg")
    try:
        normalize_scores(0.0, r_rand, r_ilqg)
        norm = lambda x: normalize_scores(x, r_rand, r_ilqg)  # noqa: E731
    except ConfigError as exc:
        log.error("%s; reporting raw returns only", exc)
        norm = lambda x: None  # noqa: E731
    scores = []
    root = Path(train_dir)
    for run, meta in zip(runs, metas):
        rows = read_metrics(run)
        if not rows:
            raise InsufficientDataError(f"{run} has no evaluations")
        means = [float(r["eval_return_mean"]) for r in rows]
        rel = run.relative_to(root).as_posix() or "."
        scores.append(RunScore(rel, int(meta["seed"]), means[-1], max(means), norm(means[-1]), norm(max(means))))
    return ScoreReport(env_name, scores, r_rand, r_ilqg)


def write_scores(report: ScoreReport, path) -> Path:
    _write_csv(Path(path), SCORES_HEADER, report.rows())
    return Path(path)


# Q-value diagnostic

@dataclass
class QRecord:
    episode: int
    t: int
    q_predicted: float
    return_to_go: float


def discounted_returns_to_go(rewards, gamma: float) -> list[float]:
    out, acc = [0.0] * len(rewards), 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def q_diagnostic(agent: Agent, env, episodes: int, seed: int = 0) -> list[QRecord]:
    """Predicted Q(s_t, a_t) next to the realized discounted return-to-go.

    Uses the agent's training discount and noise-free actions.
    """
    gamma = agent.config.gamma
    records = []
    for ep, s in enumerate(np.random.SeedSequence(seed).generate_state(episodes)):
        _, steps = ddpg.rollout(agent, env, int(s), record=True)
        rtg = discounted_returns_to_go([r for _, _, r in steps], gamma)
        for t, ((obs, action, _), g) in enumerate(zip(steps, rtg)):
            records.append(QRecord(ep, t, agent.q_value(obs, action), g))
    return records


def write_q_diagnostic(records, path) -> Path:
    _write_csv(Path(path), QDIAG_HEADER,
               ([r.episode, r.t, r.q_predicted, r.return_to_go] for r in records))
    return Path(path)


def pearson(records) -> float:
    q = np.array([r.q_predicted for r in records])
    g = np.array([r.return_to_go for r in records])
    if q.size < 2 or q.std() == 0 or g.std() == 0:
        return float("nan")
    return float(np.corrcoef(q, g)[0, 1])

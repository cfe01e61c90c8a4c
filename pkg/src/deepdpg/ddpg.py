"""Deep deterministic policy gradient: replay buffer, OU exploration, agent updates."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import nn
from .errors import ConfigError, InsufficientDataError, NumericalError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool = False

    def __post_init__(self):
        a = np.asarray(self.action, dtype=np.float64)
        if np.any(np.abs(a) > 1.0) or not np.isfinite(a).all():
            raise ValueError(f"action {a} outside [-1, 1]")
        if not math.isfinite(self.reward):
            raise ValueError("reward must be finite")


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


class ReplayBuffer:
    """Bounded FIFO of transitions backed by preallocated ring arrays.

    Storage is allocated on the first insert, once the state and action widths
    are known.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("replay capacity must be at least 1")
        self.capacity = int(capacity)
        self.count = 0  # total inserts ever
        self._arrays: dict[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return min(self.count, self.capacity)

    def _allocate(self, t: Transition) -> None:
        ds, da = np.size(t.state), np.size(t.action)
        self._arrays = {
            "states": np.zeros((self.capacity, ds)),
            "actions": np.zeros((self.capacity, da)),
            "rewards": np.zeros(self.capacity),
            "next_states": np.zeros((self.capacity, ds)),
            "terminals": np.zeros(self.capacity),
        }

    def store(self, t: Transition) -> None:
        if self._arrays is None:
            self._allocate(t)
        i = self.count % self.capacity
        arr = self._arrays
        arr["states"][i] = t.state
        arr["actions"][i] = t.action
        arr["rewards"][i] = t.reward
        arr["next_states"][i] = t.next_state
        arr["terminals"][i] = float(t.terminal)
        self.count += 1

    def _order(self) -> np.ndarray:
        """Physical slots in insertion order, oldest first."""
        n = len(self)
        start = self.count % self.capacity if self.count > self.capacity else 0
        return (start + np.arange(n)) % self.capacity

    def _gather(self, slots: np.ndarray) -> Batch:
        arr = self._arrays
        return Batch(*(arr[k][slots] for k in ("states", "actions", "rewards", "next_states", "terminals")))

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """n uniform draws with replacement from the current contents.

        Any non-empty buffer can serve any n since draws are with replacement.
        """
        size = len(self)
        if size == 0:
            raise InsufficientDataError(f"buffer is empty, {n} transitions requested")
        if n < 1:
            raise ValueError("n must be positive")
        idx = rng.integers(0, size, size=n)
        return self._gather(self._order()[idx])

    def contents(self) -> list[Transition]:
        if self._arrays is None:
            return []
        b = self._gather(self._order())
        return [
            Transition(b.states[i], b.actions[i], float(b.rewards[i]), b.next_states[i], bool(b.terminals[i]))
            for i in range(len(b))
        ]


def buffer_store(buf: ReplayBuffer, t: Transition) -> ReplayBuffer:
    buf.store(t)
    return buf


def buffer_sample(buf: ReplayBuffer, n: int, rng: np.random.Generator) -> Batch:
    return buf.sample(n, rng)


class OUProcess:
    """Ornstein-Uhlenbeck noise, Euler-Maruyama discretized.

    ``x <- x + theta * (mu - x) * dt + sigma * sqrt(dt) * N(0, 1)``
    """

    def __init__(self, dim: int, theta: float = 0.15, sigma: float = 0.2, mu: float = 0.0,
                 dt: float = 1.0, seed: int | None = None):
        if theta <= 0 or sigma < 0 or dt <= 0:
            raise ConfigError("OU process needs theta > 0, sigma >= 0, dt > 0")
        self.dim = dim
        self.theta, self.sigma, self.mu, self.dt = theta, sigma, mu, dt
        self.rng = np.random.default_rng(seed)
        self.state = np.zeros(dim)

    def reset(self) -> None:
        self.state = np.zeros(self.dim)

    def step(self) -> np.ndarray:
        xi = self.rng.standard_normal(self.dim)
        self.state = (self.state + self.theta * (self.mu - self.state) * self.dt
                      + self.sigma * math.sqrt(self.dt) * xi)
        return self.state.copy()

    def stationary_std(self) -> float:
        return math.sqrt(self.sigma ** 2 / (self.theta * (2.0 - self.theta * self.dt)))


def ou_step(p: OUProcess) -> np.ndarray:
    return p.step()


@dataclass
class TrainingConfig:
    gamma: float = 0.99
    tau: float = 0.001
    batch_size: int = 64
    buffer_capacity: int = 1_000_000
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    critic_weight_decay: float = 1e-2
    warmup_transitions: int = 1000
    use_target_networks: bool = True
    use_batch_norm: bool = True
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_dt: float = 1.0
    max_env_steps: int = 100_000
    eval_interval: int = 2000
    hidden: tuple[int, ...] = (400, 300)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            raise ConfigError("need 1 <= batch_size <= buffer_capacity")
        if self.warmup_transitions < self.batch_size:
            raise ConfigError("warmup_transitions must be at least batch_size")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.critic_weight_decay < 0:
            raise ConfigError("weight decay must be non-negative")
        if self.use_batch_norm and self.batch_size < 2:
            raise ConfigError("batch norm needs batch_size >= 2")
        if self.max_env_steps < 0 or self.eval_interval < 1:
            raise ConfigError("max_env_steps >= 0 and eval_interval >= 1 required")
        if len(self.hidden) < 2:
            raise ConfigError("the critic needs at least two hidden layers")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


class Agent:
    """Actor, critic, their target copies and the two Adam states.

    All randomness (network init, minibatch draws, exploration noise, episode
    reset seeds) derives from ``seed``.
    """

    def __init__(self, obs_dim: int, act_dim: int, config: TrainingConfig | None = None, seed: int = 0):
        self.config = config = config or TrainingConfig()
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        init_a, init_c, sample_ss, noise_ss, env_ss = ss.spawn(5)
        bn = config.use_batch_norm
        self.actor = nn.init_network(
            nn.actor_spec(obs_dim, act_dim, config.hidden, bn), int(init_a.generate_state(1)[0]))
        self.critic = nn.init_network(
            nn.critic_spec(obs_dim, act_dim, config.hidden, bn), int(init_c.generate_state(1)[0]))
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = nn.adam_state(self.actor, config.actor_lr)
        self.critic_opt = nn.adam_state(self.critic, config.critic_lr,
                                        weight_decay=config.critic_weight_decay)
        self.rng = np.random.default_rng(sample_ss)
        self.noise = OUProcess(act_dim, config.ou_theta, config.ou_sigma, dt=config.ou_dt,
                               seed=int(noise_ss.generate_state(1)[0]))
        self.env_rng = np.random.default_rng(env_ss)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.total_steps = 0
        self.updates = 0

    def networks(self) -> dict[str, nn.Network]:
        return {"actor": self.actor, "critic": self.critic,
                "target_actor": self.target_actor, "target_critic": self.target_critic}

    def save(self, path, meta: dict | None = None):
        info = {"obs_dim": self.obs_dim, "act_dim": self.act_dim, "seed": self.seed,
                "config": self.config.to_dict(), **(meta or {})}
        return nn.save_checkpoint(path, self.networks(), info)

    @classmethod
    def load(cls, path) -> tuple["Agent", dict]:
        nets, meta = nn.load_checkpoint(path)
        agent = cls(meta["obs_dim"], meta["act_dim"], TrainingConfig.from_dict(meta["config"]), meta["seed"])
        agent.actor, agent.critic = nets["actor"], nets["critic"]
        agent.target_actor, agent.target_critic = nets["target_actor"], nets["target_critic"]
        return agent, meta

    def q_value(self, state: np.ndarray, action: np.ndarray) -> float:
        x = np.concatenate([np.ravel(state), np.ravel(action)])[None, :]
        q, _ = nn.forward(self.critic, x, "eval")
        return float(q[0, 0])


def select_action(agent: Agent, state: np.ndarray, noise: OUProcess | None = None) -> np.ndarray:
    """Greedy actor output, plus clipped OU noise when exploring."""
    s = np.asarray(state, dtype=np.float64).reshape(1, -1)
    if not np.isfinite(s).all():
        raise ValueError("non-finite state")
    a, _ = nn.forward(agent.actor, s, "eval")
    a = a[0]
    if noise is not None:
        a = np.clip(a + noise.step(), -1.0, 1.0)
    return a


def _bootstrap_targets(agent: Agent, batch: Batch) -> np.ndarray:
    cfg = agent.config
    if cfg.use_target_networks:
        actor, critic = agent.target_actor, agent.target_critic
    else:
        actor, critic = agent.actor, agent.critic
    next_a, _ = nn.forward(actor, batch.next_states, "eval")
    q_next, _ = nn.forward(critic, np.hstack([batch.next_states, next_a]), "eval")
    y = batch.rewards + cfg.gamma * (1.0 - batch.terminals) * q_next[:, 0]
    if not np.isfinite(y).all():
        raise NumericalError("non-finite bootstrap target; critic update aborted")
    return y


def critic_update(agent: Agent, batch: Batch) -> float:
    """One Adam step on the mean squared TD error; returns the pre-update loss."""
    y = _bootstrap_targets(agent, batch)
    n = len(batch)
    q, cache = nn.forward(agent.critic, np.hstack([batch.states, batch.actions]), "train")
    diff = q[:, 0] - y
    loss = float(np.mean(diff ** 2))
    grads = nn.backward(agent.critic, cache, (2.0 / n) * diff[:, None])
    nn.adam_step(agent.critic, grads, agent.critic_opt)
    return loss


def actor_gradient(agent: Agent, batch: Batch) -> tuple[nn.GradientBundle, float]:
    """Sampled deterministic policy gradient of -(1/N) sum Q(s_i, mu(s_i)).

    The critic's input gradient w.r.t. the action columns is chained through
    the actor. Critic parameters and running statistics are left untouched.
    """
    n = len(batch)
    a, acache = nn.forward(agent.actor, batch.states, "train")
    q, ccache = nn.forward(agent.critic, np.hstack([batch.states, a]), "train", update_stats=False)
    cg = nn.backward(agent.critic, ccache, np.full((n, 1), 1.0 / n), param_grads=False,
                     concat_inputs_only=True)
    dq_da = cg.input_gradient[:, agent.obs_dim:]
    if not np.isfinite(dq_da).all():
        raise NumericalError("non-finite action gradient; actor update aborted")
    return nn.backward(agent.actor, acache, -dq_da), float(q.mean())


def actor_update(agent: Agent, batch: Batch) -> float:
    """Ascend (1/N) sum Q(s_i, mu(s_i)); returns that objective before the step."""
    grads, objective = actor_gradient(agent, batch)
    nn.adam_step(agent.actor, grads, agent.actor_opt)
    return objective


def update_targets(agent: Agent) -> None:
    tau = agent.config.tau
    nn.soft_update(agent.target_critic, agent.critic, tau)
    nn.soft_update(agent.target_actor, agent.actor, tau)


@dataclass
class TrainingLog:
    episode_returns: list[float] = field(default_factory=list)
    episode_lengths: list[int] = field(default_factory=list)
    steps: int = 0
    updates: int = 0
    last_critic_loss: float = float("nan")
    last_actor_objective: float = float("nan")
    error: str | None = None


Hook = Callable[[Agent, dict], None]


def train(agent: Agent, env, episodes: int | None = None, hooks: Sequence[Hook] = (),
          max_steps: int | None = None) -> TrainingLog:
    """Run the DDPG loop until ``episodes`` episodes or ``max_steps`` env steps.

    ``max_steps`` defaults to ``config.max_env_steps`` and counts the agent's
    lifetime steps. Each hook is called after every env step with the step
    metrics. Environment faults and numerical aborts stop training; the partial
    log carries the error.
    """
    cfg = agent.config
    limit = cfg.max_env_steps if max_steps is None else max_steps
    out = TrainingLog()
    episode = 0
    while (episodes is None or episode < episodes) and agent.total_steps < limit:
        try:
            obs = env.reset(int(agent.env_rng.integers(2 ** 31)))
        except Exception as exc:  # env fault
            out.error = f"env reset failed: {exc!r}"
            log.error(out.error)
            return out
        agent.noise.reset()
        ep_return, ep_len, done = 0.0, 0, False
        while not done and agent.total_steps < limit:
            action = select_action(agent, obs, agent.noise)
            try:
                next_obs, reward, done = env.step(action)
            except Exception as exc:
                out.error = f"env step failed: {exc!r}"
                log.error(out.error)
                return out
            terminal = bool(done) and not getattr(env, "truncated", False)
            agent.buffer.store(Transition(obs, action, float(reward), next_obs, terminal))
            agent.total_steps += 1
            out.steps += 1
            ep_return += reward
            ep_len += 1
            obs = next_obs
            updated = False
            if len(agent.buffer) >= cfg.warmup_transitions:
                batch = agent.buffer.sample(cfg.batch_size, agent.rng)
                try:
                    out.last_critic_loss = critic_update(agent, batch)
                    out.last_actor_objective = actor_update(agent, batch)
                except NumericalError as exc:
                    out.error = str(exc)
                    log.error(out.error)
                    return out
                update_targets(agent)
                agent.updates += 1
                out.updates += 1
                updated = True
            metrics = {
                "step": agent.total_steps, "episode": episode, "reward": float(reward),
                "done": bool(done), "updated": updated, "critic_loss": out.last_critic_loss,
                "actor_objective": out.last_actor_objective, "buffer_size": len(agent.buffer),
            }
            for hook in hooks:
                hook(agent, metrics)
        if done:
            out.episode_returns.append(ep_return)
            out.episode_lengths.append(ep_len)
        episode += 1
    return out


def rollout(agent: Agent, env, seed: int, *, record: bool = False):
    """One noise-free episode. Returns the undiscounted return, and with
    ``record`` also the visited (observation, action, reward) triples."""
    obs = env.reset(seed)
    total, done, steps = 0.0, False, []
    while not done:
        action = select_action(agent, obs)
        next_obs, reward, done = env.step(action)
        if record:
            steps.append((obs, action, reward))
        total += reward
        obs = next_obs
    return (total, steps) if record else total


def evaluate(agent: Agent, env, episodes: int, seed: int) -> list[float]:
    """Noise-free returns over ``episodes`` episodes with seeded resets."""
    seeds = np.random.SeedSequence(seed).generate_state(episodes)
    return [rollout(agent, env, int(s)) for s in seeds]


def as_batch(transitions: Iterable[Transition]) -> Batch:
    ts = list(transitions)
    return Batch(
        np.array([t.state for t in ts], dtype=np.float64),
        np.array([t.action for t in ts], dtype=np.float64).reshape(len(ts), -1),
        np.array([t.reward for t in ts], dtype=np.float64),
        np.array([t.next_state for t in ts], dtype=np.float64),
        np.array([float(t.terminal) for t in ts]),
    )

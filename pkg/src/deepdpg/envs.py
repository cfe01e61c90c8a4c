"""Analytic physics tasks: pendulum, cart, cart-pole (balance / swing-up), single-joint reacher.

Every environment exposes the RL interface (``reset`` / ``step``) and, for the
planner, the pure one-step map ``dynamics(state, action)`` and a smooth
``cost(state, action) = -reward(state, action)``. Agent-facing actions live in
[-1, 1]^dim; ``action_scale`` converts them to physical force or torque.
All integration is semi-implicit Euler (velocity first, then position).
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import ConfigError


def wrap_angle(x: float) -> float:
    """Map to (-pi, pi]."""
    y = math.remainder(x, 2.0 * math.pi)
    return math.pi if y == -math.pi else y


class Environment:
    """Base class; subclasses fill in the physics.

    Overridable parameters are the public class attributes listed in
    ``params``; pass them as keyword arguments (or through ``make_env``).
    """

    name = "base"
    state_dim = 0
    obs_dim = 0
    act_dim = 1
    dt = 0.05
    max_episode_steps = 200
    angle_indices: tuple[int, ...] = ()
    params: tuple[str, ...] = ("dt", "max_episode_steps")

    def __init__(self, **overrides):
        for key, value in overrides.items():
            if key not in self.params:
                raise ConfigError(f"{self.name}: unknown parameter {key!r}")
            current = getattr(self, key)
            for kind in (bool, int, float):
                if isinstance(current, kind):
                    value = kind(value)
                    break
            setattr(self, key, value)
        if self.dt <= 0 or self.max_episode_steps < 1:
            raise ConfigError(f"{self.name}: need dt > 0 and max_episode_steps >= 1")
        self.action_low = -np.ones(self.act_dim)
        self.action_high = np.ones(self.act_dim)
        self._state: np.ndarray | None = None
        self.t = 0
        self.truncated = False
        self.clipped_actions = 0

    # physics, to be provided by subclasses
    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def dynamics(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def reward(self, state: np.ndarray, action: np.ndarray) -> float:
        raise NotImplementedError

    def observe(self, state: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def terminated(self, state: np.ndarray) -> bool:
        return False

    fall_reward = -1.0

    # planner-facing helpers
    def cost(self, state: np.ndarray, action: np.ndarray) -> float:
        return -self.reward(state, action)

    def final_cost(self, state: np.ndarray) -> float:
        return self.cost(state, np.zeros(self.act_dim))

    def state_difference(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """a - b with angular coordinates wrapped to (-pi, pi]."""
        d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
        for i in self.angle_indices:
            d[i] = wrap_angle(d[i])
        return d

    @property
    def state(self) -> np.ndarray:
        if self._state is None:
            raise RuntimeError(f"{self.name}: call reset() first")
        return self._state.copy()

    def set_state(self, state) -> np.ndarray:
        """Place the system in ``state`` and restart the step counter."""
        self._state = np.array(state, dtype=np.float64)
        self.t = 0
        self.truncated = False
        return self.observe(self._state)

    def reset(self, seed: int | None = None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return self.set_state(self.initial_state(rng))

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self._state is None:
            raise RuntimeError(f"{self.name}: step() before reset()")
        a = np.asarray(action, dtype=np.float64).reshape(self.act_dim)
        if not np.isfinite(a).all():
            raise ValueError("non-finite action")
        if np.any(a < self.action_low) or np.any(a > self.action_high):
            self.clipped_actions += 1
            a = np.clip(a, self.action_low, self.action_high)
        r = self.reward(self._state, a)
        nxt = self.dynamics(self._state, a)
        self.t += 1
        fell = self.terminated(nxt)
        if fell:
            r = self.fall_reward
        self._state = nxt
        self.truncated = not fell and self.t >= self.max_episode_steps
        return self.observe(nxt), float(r), bool(fell or self.truncated)


class Pendulum(Environment):
    """Torque-limited pendulum swing-up.

    State (theta, omega), theta measured from upright (pi = hanging).
    Observation (cos theta, sin theta, omega). Max torque is 2 N m against
    m g l = 10 N m, so the swing-up needs pumping.
    """

    name = "pendulum"
    state_dim, obs_dim, act_dim = 2, 3, 1
    dt = 0.05
    max_episode_steps = 200
    angle_indices = (0,)
    mass = 1.0
    length = 1.0
    gravity = 10.0
    torque_scale = 2.0
    substeps = 20
    reset_noise = 0.1
    params = ("dt", "max_episode_steps", "mass", "length", "gravity", "torque_scale",
              "substeps", "reset_noise")

    def initial_state(self, rng):
        th = math.pi + rng.uniform(-self.reset_noise, self.reset_noise)
        om = rng.uniform(-self.reset_noise, self.reset_noise)
        return np.array([wrap_angle(th), om])

    def dynamics(self, state, action):
        a = min(1.0, max(-1.0, float(np.ravel(action)[0])))
        th, om = float(state[0]), float(state[1])
        g_l = self.gravity / self.length
        torque_acc = self.torque_scale * a / (self.mass * self.length ** 2)
        h = self.dt / self.substeps
        for _ in range(self.substeps):
            om += (g_l * math.sin(th) + torque_acc) * h
            th += om * h
        return np.array([wrap_angle(th), om])

    def reward(self, state, action):
        u = self.torque_scale * float(np.ravel(action)[0])
        th = wrap_angle(float(state[0]))
        return -(th * th + 0.1 * float(state[1]) ** 2 + 0.001 * u * u)

    def observe(self, state):
        return np.array([math.cos(state[0]), math.sin(state[0]), state[1]])

    def energy(self, state) -> float:
        """Kinetic plus potential energy, zero at rest hanging down."""
        th, om = float(state[0]), float(state[1])
        m, l = self.mass, self.length
        return 0.5 * m * l * l * om * om + m * self.gravity * l * (1.0 + math.cos(th))


class Cart(Environment):
    """Point mass on a line; bring it to rest at the origin."""

    name = "cart"
    state_dim, obs_dim, act_dim = 2, 2, 1
    dt = 0.05
    max_episode_steps = 200
    mass = 1.0
    force_scale = 10.0
    reset_range = 1.0
    params = ("dt", "max_episode_steps", "mass", "force_scale", "reset_range")

    def initial_state(self, rng):
        return rng.uniform(-self.reset_range, self.reset_range, size=2)

    def dynamics(self, state, action):
        f = self.force_scale * min(1.0, max(-1.0, float(np.ravel(action)[0])))
        x, v = float(state[0]), float(state[1])
        v = v + f / self.mass * self.dt
        return np.array([x + v * self.dt, v])

    def reward(self, state, action):
        u = self.force_scale * float(np.ravel(action)[0])
        return -(float(state[0]) ** 2 + 0.1 * float(state[1]) ** 2 + 0.001 * u * u)

    def observe(self, state):
        return np.array(state, dtype=np.float64)


class CartPole(Environment):
    """Frictionless cart-pole. State (x, x_dot, theta, omega), theta from upright.

    Observation (x, x_dot, cos theta, sin theta, omega). Leaving |x| <= 2.4
    ends the episode with ``fall_reward``.
    """

    name = "cartpole"
    state_dim, obs_dim, act_dim = 4, 5, 1
    dt = 0.02
    max_episode_steps = 500
    angle_indices = (2,)
    cart_mass = 1.0
    pole_mass = 0.1
    half_length = 0.5
    gravity = 9.8
    force_scale = 10.0
    x_limit = 2.4
    fall_reward = -500.0
    upright_start = False
    reset_noise = 0.05
    params = ("dt", "max_episode_steps", "cart_mass", "pole_mass", "half_length", "gravity",
              "force_scale", "x_limit", "fall_reward", "upright_start", "reset_noise")

    def initial_state(self, rng):
        s = rng.uniform(-self.reset_noise, self.reset_noise, size=4)
        if not self.upright_start:
            s[2] = wrap_angle(math.pi + s[2])
        return s

    def dynamics(self, state, action):
        f = self.force_scale * min(1.0, max(-1.0, float(np.ravel(action)[0])))
        x, xd, th, om = (float(v) for v in state)
        mp, l = self.pole_mass, self.half_length
        total = self.cart_mass + mp
        sin, cos = math.sin(th), math.cos(th)
        tmp = (f + mp * l * om * om * sin) / total
        th_acc = (self.gravity * sin - cos * tmp) / (l * (4.0 / 3.0 - mp * cos * cos / total))
        x_acc = tmp - mp * l * th_acc * cos / total
        xd += x_acc * self.dt
        om += th_acc * self.dt
        return np.array([x + xd * self.dt, xd, wrap_angle(th + om * self.dt), om])

    def reward(self, state, action):
        u = self.force_scale * float(np.ravel(action)[0])
        return math.cos(float(state[2])) - 0.001 * u * u - 0.05 * float(state[0]) ** 2

    def terminated(self, state):
        return abs(float(state[0])) > self.x_limit

    def observe(self, state):
        return np.array([state[0], state[1], math.cos(state[2]), math.sin(state[2]), state[3]])


class CartPoleBalance(CartPole):
    name = "cartpole_balance"
    upright_start = True


class CartPoleSwingUp(CartPole):
    name = "cartpole_swingup"
    upright_start = False


class ReacherSingle(Environment):
    """One damped joint driven to a target angle redrawn every episode.

    State (theta, omega, target); the target is constant under the dynamics.
    Observation (cos theta, sin theta, omega, cos target, sin target).
    """

    name = "reacher_single"
    state_dim, obs_dim, act_dim = 3, 5, 1
    dt = 0.05
    max_episode_steps = 100
    angle_indices = (0, 2)
    inertia = 1.0
    damping = 1.0
    torque_scale = 5.0
    bonus_radius = 0.05
    bonus = 1.0
    params = ("dt", "max_episode_steps", "inertia", "damping", "torque_scale",
              "bonus_radius", "bonus")

    def initial_state(self, rng):
        th, target = rng.uniform(-math.pi, math.pi, size=2)
        return np.array([th, 0.0, target])

    def dynamics(self, state, action):
        tq = self.torque_scale * min(1.0, max(-1.0, float(np.ravel(action)[0])))
        th, om, target = (float(v) for v in state)
        om += (tq / self.inertia - self.damping * om) * self.dt
        return np.array([wrap_angle(th + om * self.dt), om, target])

    def distance(self, state) -> float:
        return wrap_angle(float(state[0]) - float(state[2]))

    def reward(self, state, action):
        u = self.torque_scale * float(np.ravel(action)[0])
        d = self.distance(state)
        r = -(d * d + 0.001 * u * u)
        if abs(d) < self.bonus_radius:
            r += self.bonus
        return r

    def cost(self, state, action):
        # the proximity bonus is a step function; the planner sees only the smooth part
        u = self.torque_scale * float(np.ravel(action)[0])
        d = self.distance(state)
        return d * d + 0.001 * u * u

    def observe(self, state):
        return np.array([math.cos(state[0]), math.sin(state[0]), state[1],
                         math.cos(state[2]), math.sin(state[2])])


ENVIRONMENTS: dict[str, Callable[..., Environment]] = {
    "pendulum": Pendulum,
    "cart": Cart,
    "cartpole_balance": CartPoleBalance,
    "cartpole_swingup": CartPoleSwingUp,
    "reacher_single": ReacherSingle,
}


def make_env(name: str, **overrides) -> Environment:
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(**overrides)


def random_policy_return(env: Environment, episodes: int, seed: int) -> float:
    """Mean undiscounted return of uniformly random actions."""
    return float(np.mean(random_policy_returns(env, episodes, seed)))


def random_policy_returns(env: Environment, episodes: int, seed: int) -> list[float]:
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    ss = np.random.SeedSequence(seed)
    returns = []
    for child in ss.spawn(episodes):
        rng = np.random.default_rng(child)
        env.reset(int(rng.integers(2 ** 31)))
        total, done = 0.0, False
        while not done:
            _, r, done = env.step(rng.uniform(env.action_low, env.action_high))
            total += r
        returns.append(total)
    return returns

"""Receding-horizon iLQG baseline.

At every control step a single iLQG iteration runs from the true state: roll
out the warm-start action sequence, linearize dynamics and quadratize cost by
finite differences, integrate the value function backwards, line-search the
resulting direction with forward rollouts, execute the first action, shift.

Trajectory cost is ``sum_t cost(x_t, u_t) + final_cost(x_H)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PlannerError

# Half a second is enough for regulation tasks; swing-ups need to see the whole
# pump-and-catch maneuver, which one iLQG iteration cannot plan over 0.5 s.
DEFAULT_HORIZONS = {"pendulum": 30, "cart": 10, "cartpole_balance": 50, "cartpole_swingup": 75,
                    "reacher_single": 10}


@dataclass
class PlannerConfig:
    horizon_steps: int = 10
    reg_init: float = 0.0
    reg_min: float = 1e-6
    reg_growth: float = 10.0
    reg_shrink: float = 2.0
    reg_max: float = 1e8
    step_sizes: tuple[float, ...] = (1.0, 0.5, 0.25, 0.125, 0.0625)
    fd_step: float = 1e-5
    hessian_step: float = 1e-4

    def __post_init__(self):
        self.step_sizes = tuple(float(a) for a in self.step_sizes)
        if self.horizon_steps < 1:
            raise ConfigError("horizon_steps must be >= 1")
        if self.reg_init < 0 or self.reg_min <= 0 or self.reg_growth <= 1 or self.reg_shrink <= 1:
            raise ConfigError("bad regularization schedule")
        a = self.step_sizes
        if not a or a[0] != 1.0 or any(x <= y for x, y in zip(a, a[1:])) or a[-1] <= 0:
            raise ConfigError("step sizes must descend strictly from 1")
        if self.fd_step <= 0 or self.hessian_step <= 0:
            raise ConfigError("finite-difference steps must be positive")

    @classmethod
    def for_env(cls, env, **overrides) -> "PlannerConfig":
        """Per-task default horizon (half a second for unlisted envs)."""
        horizon = DEFAULT_HORIZONS.get(env.name, max(1, round(0.5 / env.dt)))
        return cls(**{"horizon_steps": horizon, **overrides})


@dataclass
class Trajectory:
    states: np.ndarray   # (H+1, n)
    actions: np.ndarray  # (H, m)
    total_cost: float


@dataclass
class LocalModel:
    """Per-step linear dynamics and quadratic cost; index H holds the final cost."""

    A: np.ndarray     # (H, n, n)
    B: np.ndarray     # (H, n, m)
    c_x: np.ndarray   # (H+1, n)
    c_u: np.ndarray   # (H, m)
    C_xx: np.ndarray  # (H+1, n, n)
    C_uu: np.ndarray  # (H, m, m)
    C_ux: np.ndarray  # (H, m, n)

    @property
    def horizon(self) -> int:
        return self.A.shape[0]


@dataclass
class BackPassResult:
    k: np.ndarray  # (H, m) feedforward
    K: np.ndarray  # (H, m, n) feedback
    reg: float
    d1: float = 0.0  # sum k' Q_u
    d2: float = 0.0  # sum k' Q_uu k / 2

    def expected_change(self, alpha: float = 1.0) -> float:
        """Predicted cost change for step size ``alpha`` (negative = improvement)."""
        return alpha * self.d1 + alpha * alpha * self.d2

    @property
    def expected_decrease(self) -> float:
        return -self.expected_change(1.0)


def rollout(env, x0: np.ndarray, actions: np.ndarray) -> Trajectory:
    actions = np.asarray(actions, dtype=np.float64)
    states = [np.asarray(x0, dtype=np.float64)]
    cost = 0.0
    for u in actions:
        cost += env.cost(states[-1], u)
        states.append(env.dynamics(states[-1], u))
    cost += env.final_cost(states[-1])
    return Trajectory(np.array(states), actions.copy(), float(cost))


def linearize(env, state: np.ndarray, action: np.ndarray, h: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference Jacobians of ``env.dynamics`` w.r.t. state and action."""
    if h <= 0:
        raise ValueError("perturbation must be positive")
    x = np.asarray(state, dtype=np.float64)
    u = np.asarray(action, dtype=np.float64)
    n, m = x.size, u.size
    A = np.empty((n, n))
    B = np.empty((n, m))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        A[:, i] = env.state_difference(env.dynamics(x + e, u), env.dynamics(x - e, u)) / (2 * h)
    for j in range(m):
        e = np.zeros(m)
        e[j] = h
        B[:, j] = env.state_difference(env.dynamics(x, u + e), env.dynamics(x, u - e)) / (2 * h)
    if not (np.isfinite(A).all() and np.isfinite(B).all()):
        raise PlannerError("non-finite dynamics Jacobian")
    return A, B


def _gradient_hessian(f, z: np.ndarray, h: float, hh: float) -> tuple[np.ndarray, np.ndarray]:
    d = z.size
    grad = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        grad[i] = (f(z + e) - f(z - e)) / (2 * h)
    hess = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = hh
        for j in range(i, d):
            ej = np.zeros(d)
            ej[j] = hh
            v = (f(z + ei + ej) - f(z + ei - ej) - f(z - ei + ej) + f(z - ei - ej)) / (4 * hh * hh)
            hess[i, j] = hess[j, i] = v
    return grad, hess


def quadratize(env, state, action, h: float = 1e-5, hh: float = 1e-4):
    """Finite-difference (c_x, c_u, C_xx, C_uu, C_ux) of ``env.cost``."""
    x = np.asarray(state, dtype=np.float64)
    u = np.asarray(action, dtype=np.float64)
    n = x.size
    grad, hess = _gradient_hessian(lambda z: env.cost(z[:n], z[n:]), np.concatenate([x, u]), h, hh)
    return grad[:n], grad[n:], hess[:n, :n], hess[n:, n:], hess[n:, :n]


def quadratize_final(env, state, h: float = 1e-5, hh: float = 1e-4):
    grad, hess = _gradient_hessian(env.final_cost, np.asarray(state, dtype=np.float64), h, hh)
    return grad, hess


def local_model(env, traj: Trajectory, config: PlannerConfig) -> LocalModel:
    H, m = traj.actions.shape
    n = traj.states.shape[1]
    A, B = np.empty((H, n, n)), np.empty((H, n, m))
    c_x, c_u = np.empty((H + 1, n)), np.empty((H, m))
    C_xx, C_uu, C_ux = np.empty((H + 1, n, n)), np.empty((H, m, m)), np.empty((H, m, n))
    for t in range(H):
        x, u = traj.states[t], traj.actions[t]
        A[t], B[t] = linearize(env, x, u, config.fd_step)
        c_x[t], c_u[t], C_xx[t], C_uu[t], C_ux[t] = quadratize(env, x, u, config.fd_step, config.hessian_step)
    c_x[H], C_xx[H] = quadratize_final(env, traj.states[H], config.fd_step, config.hessian_step)
    return LocalModel(A, B, c_x, c_u, C_xx, C_uu, C_ux)


def _backward_once(model: LocalModel, reg: float) -> BackPassResult | None:
    H = model.horizon
    n, m = model.B.shape[1], model.B.shape[2]
    k, K = np.zeros((H, m)), np.zeros((H, m, n))
    V_x, V_xx = model.c_x[H].copy(), model.C_xx[H].copy()
    d1 = d2 = 0.0
    eye = np.eye(m)
    for t in range(H - 1, -1, -1):
        A, B = model.A[t], model.B[t]
        Q_x = model.c_x[t] + A.T @ V_x
        Q_u = model.c_u[t] + B.T @ V_x
        Q_xx = model.C_xx[t] + A.T @ V_xx @ A
        Q_uu = model.C_uu[t] + B.T @ V_xx @ B
        Q_ux = model.C_ux[t] + B.T @ V_xx @ A
        Q_uu_reg = 0.5 * (Q_uu + Q_uu.T) + reg * eye
        try:
            L = np.linalg.cholesky(Q_uu_reg)
        except np.linalg.LinAlgError:
            return None
        rhs = np.column_stack([Q_u, Q_ux])
        sol = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        k[t] = -sol[:, 0]
        K[t] = -sol[:, 1:]
        d1 += float(k[t] @ Q_u)
        d2 += 0.5 * float(k[t] @ Q_uu @ k[t])
        V_x = Q_x + K[t].T @ Q_uu @ k[t] + K[t].T @ Q_u + Q_ux.T @ k[t]
        V_xx = Q_xx + K[t].T @ Q_uu @ K[t] + K[t].T @ Q_ux + Q_ux.T @ K[t]
        V_xx = 0.5 * (V_xx + V_xx.T)
    return BackPassResult(k, K, reg, d1, d2)


def backward_pass(model: LocalModel, reg: float = 0.0, config: PlannerConfig | None = None) -> BackPassResult:
    """Riccati-style value recursion along the nominal trajectory.

    ``Q_uu + reg * I`` must be positive definite at every step; otherwise ``reg``
    grows (by ``reg_growth``, from at least ``reg_min``) and the pass restarts.
    Raises PlannerError once ``reg`` exceeds ``reg_max``.
    """
    config = config or PlannerConfig()
    while True:
        result = _backward_once(model, reg)
        if result is not None:
            return result
        reg = max(reg * config.reg_growth, config.reg_min)
        if reg > config.reg_max:
            raise PlannerError("action Hessian not positive definite below the regularization cap")


def forward_pass(env, nominal: Trajectory, gains: BackPassResult,
                 step_sizes=(1.0, 0.5, 0.25, 0.125, 0.0625)) -> Trajectory:
    """Line search over ``u = u_bar + alpha k + K (x - x_bar)``; keeps the cheapest.

    The nominal trajectory is itself a candidate, so the result never costs more.
    Actions are clipped to the environment's bounds.
    """
    H = nominal.actions.shape[0]
    if gains.k.shape[0] != H:
        raise ValueError("gains and nominal trajectory have different horizons")
    low = getattr(env, "action_low", None)
    high = getattr(env, "action_high", None)
    best = nominal
    for alpha in step_sizes:
        x = nominal.states[0].copy()
        states, actions, cost = [x], [], 0.0
        for t in range(H):
            dx = env.state_difference(x, nominal.states[t])
            u = nominal.actions[t] + alpha * gains.k[t] + gains.K[t] @ dx
            if low is not None:
                u = np.clip(u, low, high)
            cost += env.cost(x, u)
            x = env.dynamics(x, u)
            states.append(x)
            actions.append(u)
        cost += env.final_cost(x)
        if np.isfinite(cost) and cost < best.total_cost:
            best = Trajectory(np.array(states), np.array(actions), float(cost))
    return best


@dataclass
class MPCStep:
    t: int
    action: np.ndarray
    reward: float
    plan_cost: float
    reg: float
    failed: bool = False


def plan_step(env, state, warm_actions, config: PlannerConfig, reg: float):
    """One iLQG iteration from ``state``; returns (improved trajectory, next reg, failed)."""
    nominal = rollout(env, state, warm_actions)
    try:
        model = local_model(env, nominal, config)
        gains = backward_pass(model, reg, config)
    except PlannerError:
        return nominal, reg, True
    improved = forward_pass(env, nominal, gains, config.step_sizes)
    reg = gains.reg / config.reg_shrink
    if reg < config.reg_min:
        reg = 0.0
    return improved, reg, False


def mpc_rollout(env, config: PlannerConfig | None = None, episode_length: int | None = None,
                ) -> tuple[list[MPCStep], float]:
    """Run the receding-horizon controller on an already reset ``env``.

    Returns the per-step log and the realized undiscounted return.
    """
    config = config or PlannerConfig.for_env(env)
    limit = episode_length or env.max_episode_steps
    plan = np.zeros((config.horizon_steps, env.act_dim))
    reg = config.reg_init
    steps: list[MPCStep] = []
    total = 0.0
    for t in range(limit):
        improved, reg, failed = plan_step(env, env.state, plan, config, reg)
        action = improved.actions[0].copy()
        _, reward, done = env.step(action)
        total += reward
        steps.append(MPCStep(t, action, reward, improved.total_cost, reg, failed))
        plan = np.vstack([improved.actions[1:], improved.actions[-1:]])
        if done:
            break
    return steps, total


def mpc_returns(env, episodes: int, seed: int, config: PlannerConfig | None = None) -> list[float]:
    """Realized MPC returns over seeded episode resets."""
    seeds = np.random.SeedSequence(seed).generate_state(episodes)
    out = []
    for s in seeds:
        env.reset(int(s))
        out.append(mpc_rollout(env, config)[1])
    return out

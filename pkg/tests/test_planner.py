import numpy as np
import pytest

from deepdpg.envs import Cart, make_env
from deepdpg.errors import ConfigError, PlannerError
from deepdpg.planner import (
    BackPassResult, LocalModel, PlannerConfig, Trajectory, backward_pass, forward_pass, linearize,
    local_model, mpc_returns, mpc_rollout, quadratize, rollout,
)

from helpers import dare_gain, rel_err, riccati_lqr


class LinearQuadratic:
    """x' = A x + B u with cost 0.5 x'Qx + 0.5 u'Ru and final 0.5 x'Qf x; no action bounds."""

    name = "lq"

    def __init__(self, A, B, Q, R, Qf):
        self.A, self.B, self.Q, self.R, self.Qf = A, B, Q, R, Qf
        self.act_dim = B.shape[1]

    def dynamics(self, x, u):
        return self.A @ x + self.B @ u

    def cost(self, x, u):
        return 0.5 * x @ self.Q @ x + 0.5 * u @ self.R @ u

    def final_cost(self, x):
        return 0.5 * x @ self.Qf @ x

    def state_difference(self, a, b):
        return np.asarray(a) - np.asarray(b)


def random_lq(rng):
    n, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
    A = rng.normal(size=(n, n))
    A *= rng.uniform(0.5, 1.1) / max(1e-3, np.abs(np.linalg.eigvals(A)).max())
    B = rng.normal(size=(n, m))
    L = rng.normal(size=(n, n))
    Q = L @ L.T + 0.1 * np.eye(n)
    M = rng.normal(size=(m, m))
    R = M @ M.T + 0.1 * np.eye(m)
    Lf = rng.normal(size=(n, n))
    Qf = Lf @ Lf.T + 0.1 * np.eye(n)
    return LinearQuadratic(A, B, Q, R, Qf), int(rng.integers(1, 21)), rng.normal(size=n)


def one_iteration(env, x0, H, config=None):
    config = config or PlannerConfig(horizon_steps=H)
    nominal = rollout(env, x0, np.zeros((H, env.act_dim)))
    gains = backward_pass(local_model(env, nominal, config), 0.0, config)
    return nominal, gains, forward_pass(env, nominal, gains, (1.0,))


def test_config_validation():
    with pytest.raises(ConfigError):
        PlannerConfig(horizon_steps=0)
    with pytest.raises(ConfigError):
        PlannerConfig(step_sizes=(0.5, 1.0))
    with pytest.raises(ConfigError):
        PlannerConfig(reg_growth=1.0)
    assert PlannerConfig().step_sizes == (1.0, 0.5, 0.25, 0.125, 0.0625)


def test_cart_jacobians_analytic():
    env = Cart()
    dt, m, fs = env.dt, env.mass, env.force_scale
    A, B = linearize(env, np.array([0.3, -0.2]), np.array([0.1]))
    np.testing.assert_allclose(A, [[1, dt], [0, 1]], rtol=0, atol=1e-6)
    np.testing.assert_allclose(B, [[dt * dt / m * fs], [dt / m * fs]], rtol=0, atol=1e-6)


def test_linear_dynamics_jacobian_independent_of_h():
    rng = np.random.default_rng(0)
    env = LinearQuadratic(rng.normal(size=(3, 3)), rng.normal(size=(3, 2)), np.eye(3), np.eye(2), np.eye(3))
    x, u = rng.normal(size=3), rng.normal(size=2)
    A1, B1 = linearize(env, x, u, 1e-4)
    A2, B2 = linearize(env, x, u, 1e-6)
    assert np.abs(A1 - A2).max() < 1e-9 and np.abs(B1 - B2).max() < 1e-9
    np.testing.assert_allclose(A1, env.A, atol=1e-9)


def test_frozen_dynamics_zero_jacobian():
    class Frozen(LinearQuadratic):
        def dynamics(self, x, u):
            return np.array([1.0, -2.0])

    A, B = linearize(Frozen(np.eye(2), np.ones((2, 1)), np.eye(2), np.eye(1), np.eye(2)),
                     np.array([0.4, 0.1]), np.array([0.2]))
    assert np.array_equal(A, np.zeros((2, 2))) and np.array_equal(B, np.zeros((2, 1)))


def test_linearize_wraps_angles_across_pi():
    env = make_env("pendulum")
    A, _ = linearize(env, np.array([np.pi, 0.0]), np.zeros(1))
    assert np.abs(A).max() < 10  # no 2*pi/h jump from the wrap


def test_zero_cost_gives_zero_gains():
    class Free(LinearQuadratic):
        def cost(self, x, u):
            return 0.0

        def final_cost(self, x):
            return 0.0

    rng = np.random.default_rng(1)
    env = Free(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)), None, None, None)
    _, gains, _ = one_iteration(env, rng.normal(size=2), 5, PlannerConfig(horizon_steps=5, reg_min=1e-6))
    assert np.array_equal(gains.k, np.zeros_like(gains.k))
    assert np.array_equal(gains.K, np.zeros_like(gains.K))
    assert gains.expected_decrease == 0.0


def scalar_model(q_u, c_uu, a=0.7, b=0.3, c_x=0.0, c_xx=0.0):
    return LocalModel(A=np.array([[[a]]]), B=np.array([[[b]]]), c_x=np.array([[c_x], [0.0]]),
                      c_u=np.array([[q_u]]), C_xx=np.array([[[c_xx]], [[0.0]]]),
                      C_uu=np.array([[[c_uu]]]), C_ux=np.zeros((1, 1, 1)))


@pytest.mark.parametrize("lam", [0.0, 0.5, 3.0])
def test_scalar_horizon_one(lam):
    res = backward_pass(scalar_model(q_u=1.3, c_uu=2.0), lam)
    assert res.k[0, 0] == pytest.approx(-1.3 / (2.0 + lam), rel=1e-14)
    assert res.K[0, 0, 0] == 0.0
    assert res.reg == lam


def test_regularization_grows_until_positive_definite():
    res = backward_pass(scalar_model(q_u=1.0, c_uu=-0.5), 0.0)
    # 0 -> 1e-6 -> ... -> 1 is the first lambda making -0.5 + lambda positive
    assert res.reg == pytest.approx(1.0)
    assert res.k[0, 0] == pytest.approx(-1.0 / 0.5)


def test_regularization_cap_raises():
    with pytest.raises(PlannerError):
        backward_pass(scalar_model(q_u=1.0, c_uu=-1e9), 0.0)


def test_lqr_gains_match_riccati():
    rng = np.random.default_rng(2)
    for _ in range(5):
        env, H, x0 = random_lq(rng)
        _, gains, _ = one_iteration(env, x0, H)
        Ks, _ = riccati_lqr(env.A, env.B, env.Q, env.R, env.Qf, H)
        for t in range(H):
            assert rel_err(gains.K[t], Ks[t], floor=1e-3).max() < 1e-6


def test_random_lq_instances_reach_optimal_cost():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        env, H, x0 = random_lq(rng)
        _, Ps = riccati_lqr(env.A, env.B, env.Q, env.R, env.Qf, H)
        optimum = 0.5 * x0 @ Ps[0] @ x0
        _, _, improved = one_iteration(env, x0, H)
        worst = max(worst, abs(improved.total_cost - optimum) / abs(optimum))
    assert worst < 1e-6


def test_predicted_decrease_exact_for_lq():
    rng = np.random.default_rng(4)
    env, H, x0 = random_lq(rng)
    nominal, gains, improved = one_iteration(env, x0, H)
    assert nominal.total_cost - improved.total_cost == pytest.approx(gains.expected_decrease, rel=1e-6)


def test_forward_pass_zero_gains_returns_nominal():
    env = make_env("pendulum")
    nominal = rollout(env, np.array([2.0, 0.5]), np.full((6, 1), 0.3))
    gains = BackPassResult(np.zeros((6, 1)), np.zeros((6, 1, 2)), 0.0)
    assert forward_pass(env, nominal, gains) is nominal


def test_forward_pass_never_worse_and_consistent():
    rng = np.random.default_rng(5)
    env = make_env("cartpole_swingup")
    for _ in range(10):
        x0 = rng.uniform(-1, 1, 4)
        nominal = rollout(env, x0, rng.uniform(-1, 1, (8, 1)))
        gains = BackPassResult(rng.normal(size=(8, 1)), rng.normal(size=(8, 1, 4)), 0.0)
        out = forward_pass(env, nominal, gains)
        assert out.total_cost <= nominal.total_cost
        for t in range(8):
            assert np.array_equal(out.states[t + 1], env.dynamics(out.states[t], out.actions[t]))
        assert out.total_cost == pytest.approx(rollout(env, x0, out.actions).total_cost, rel=1e-12)


def test_forward_pass_horizon_mismatch():
    env = make_env("cart")
    nominal = rollout(env, np.zeros(2), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        forward_pass(env, nominal, BackPassResult(np.zeros((4, 1)), np.zeros((4, 1, 2)), 0.0))


def test_rollout_consistency():
    env = make_env("pendulum")
    traj = rollout(env, np.array([3.0, 0.0]), np.linspace(-1, 1, 7)[:, None])
    assert traj.states.shape == (8, 2)
    expected = sum(env.cost(traj.states[t], traj.actions[t]) for t in range(7)) + env.final_cost(traj.states[7])
    assert traj.total_cost == pytest.approx(expected, rel=1e-14)


def analytic_cart_cost_derivatives(env, x, v, a):
    fs = env.force_scale
    c_x = np.array([2 * x, 0.2 * v])
    c_u = np.array([0.002 * fs * fs * a])
    C_xx = np.diag([2.0, 0.2])
    C_uu = np.array([[0.002 * fs * fs]])
    return c_x, c_u, C_xx, C_uu, np.zeros((1, 2))


def test_quadratize_matches_analytic_cart_cost():
    env = make_env("cart")
    rng = np.random.default_rng(6)
    for _ in range(10):
        x, v, a = rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-1, 1)
        got = quadratize(env, np.array([x, v]), np.array([a]))
        for g, e in zip(got, analytic_cart_cost_derivatives(env, x, v, a)):
            # blockwise: exact zeros off the diagonal carry ~1e-8 rounding noise
            scale = np.linalg.norm(e)
            if scale == 0.0:
                assert np.abs(g).max() < 1e-6
            else:
                assert np.linalg.norm(g - e) / scale < 1e-5


def test_quadratize_matches_analytic_pendulum_cost():
    env = make_env("pendulum")
    th, om, a = 1.1, -0.7, 0.4
    c_x, c_u, C_xx, C_uu, C_ux = quadratize(env, np.array([th, om]), np.array([a]))
    s2 = env.torque_scale ** 2
    np.testing.assert_allclose(c_x, [2 * th, 0.2 * om], rtol=1e-5)
    np.testing.assert_allclose(c_u, [0.002 * s2 * a], rtol=1e-5)
    np.testing.assert_allclose(C_xx, np.diag([2.0, 0.2]), rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(C_uu, [[0.002 * s2]], rtol=1e-5)
    assert np.abs(C_ux).max() < 1e-6


def test_cart_mpc_matches_lqr_controller():
    env = make_env("cart")
    dt, fs = env.dt, env.force_scale
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[dt * dt * fs], [dt * fs]])
    K, _ = dare_gain(A, B, np.diag([2.0, 0.2]), np.array([[0.002 * fs * fs]]))
    env.set_state([1.0, 0.0])
    lqr_return, done = 0.0, False
    while not done:
        _, r, done = env.step(K @ env.state)
        lqr_return += r
    env.set_state([1.0, 0.0])
    steps, mpc_return = mpc_rollout(env)
    assert len(steps) == env.max_episode_steps
    assert abs(mpc_return - lqr_return) <= 0.01 * abs(lqr_return)


def test_mpc_zero_cost_env_returns_zero():
    class Flat(Cart):
        def reward(self, state, action):
            return 0.0

    env = Flat(max_episode_steps=20)
    env.reset(0)
    steps, ret = mpc_rollout(env)
    assert ret == 0.0 and len(steps) == 20


def test_mpc_survives_planner_failure(monkeypatch):
    import deepdpg.planner as planner

    def boom(*a, **k):
        raise PlannerError("forced")

    monkeypatch.setattr(planner, "backward_pass", boom)
    env = make_env("cart", max_episode_steps=5)
    env.reset(0)
    steps, _ = mpc_rollout(env)
    assert len(steps) == 5 and all(s.failed for s in steps)
    assert all(np.array_equal(s.action, np.zeros(1)) for s in steps)


def test_mpc_deterministic():
    env = make_env("cart", max_episode_steps=20)
    assert mpc_returns(env, 2, seed=9) == mpc_returns(env, 2, seed=9)


def test_pendulum_mpc_beats_random():
    from deepdpg.envs import random_policy_return

    env = make_env("pendulum")
    env.reset(0)
    _, ret = mpc_rollout(env)
    assert ret > random_policy_return(env, 5, seed=0) + 500


def test_trajectory_dataclass_shapes():
    t = Trajectory(np.zeros((3, 2)), np.zeros((2, 1)), 0.0)
    assert t.states.shape[0] == t.actions.shape[0] + 1

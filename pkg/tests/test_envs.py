import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepdpg.envs import (
    ENVIRONMENTS, Cart, Pendulum, make_env, random_policy_return, random_policy_returns, wrap_angle,
)
from deepdpg.errors import ConfigError

ALL = sorted(ENVIRONMENTS)


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.5) == 0.5
    assert wrap_angle(2 * math.pi + 0.25) == pytest.approx(0.25)


def test_registry_and_unknown():
    assert set(ALL) == {"pendulum", "cart", "cartpole_balance", "cartpole_swingup", "reacher_single"}
    with pytest.raises(ConfigError):
        make_env("walker2d")
    with pytest.raises(ConfigError):
        make_env("pendulum", friction=0.1)
    with pytest.raises(ConfigError):
        make_env("cart", dt=0.0)


def test_overrides_are_coerced():
    env = make_env("pendulum", max_episode_steps="50", torque_scale="3")
    assert env.max_episode_steps == 50 and env.torque_scale == 3.0


@pytest.mark.parametrize("name", ALL)
def test_reset_is_seeded(name):
    env = make_env(name)
    a = env.reset(7)
    b = env.reset(7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, env.reset(8))
    assert a.shape == (env.obs_dim,)


def test_pendulum_reset_hangs_down():
    env = make_env("pendulum")
    for seed in range(20):
        env.reset(seed)
        th, om = env.state
        assert abs(wrap_angle(th - math.pi)) <= 0.1 and abs(om) <= 0.1


def test_swingup_starts_hanging_and_balance_upright():
    up, down = make_env("cartpole_balance"), make_env("cartpole_swingup")
    for seed in range(10):
        up.reset(seed)
        down.reset(seed)
        assert abs(up.state[2]) < 0.1
        assert abs(wrap_angle(down.state[2] - math.pi)) < 0.1


def test_cart_reset_randomizes_position_and_velocity():
    env = make_env("cart")
    states = np.array([(env.reset(s), env.state)[1] for s in range(50)])
    assert states[:, 0].std() > 0.2 and states[:, 1].std() > 0.2
    assert np.all(np.abs(states) <= 1.0)


def test_step_before_reset():
    with pytest.raises(RuntimeError):
        make_env("cart").step([0.0])


def test_pendulum_stable_equilibrium():
    env = make_env("pendulum")
    env.set_state([math.pi, 0.0])
    env.step([0.0])
    assert np.allclose(env.state, [math.pi, 0.0], rtol=0, atol=1e-12)


def test_cartpole_upright_equilibrium_exact():
    env = make_env("cartpole_balance")
    env.set_state([0.0, 0.0, 0.0, 0.0])
    for _ in range(100):
        _, r, done = env.step([0.0])
        assert not done
    assert np.array_equal(env.state, np.zeros(4))
    assert r == 1.0


def test_cart_hand_integration():
    env = Cart(force_scale=1.0)
    nxt = env.dynamics(np.array([0.0, 0.0]), np.array([1.0]))
    np.testing.assert_allclose(nxt, [0.0025, 0.05], rtol=0, atol=1e-15)
    # default scale 10 N: action 0.1 is the same physical force
    nxt = make_env("cart").dynamics(np.array([0.0, 0.0]), np.array([0.1]))
    np.testing.assert_allclose(nxt, [0.0025, 0.05], rtol=0, atol=1e-15)
    assert np.array_equal(make_env("cart").dynamics(np.zeros(2), np.zeros(1)), np.zeros(2))


def test_cartpole_leaving_track_terminates_with_penalty():
    env = make_env("cartpole_balance")
    env.set_state([2.39, 5.0, 0.0, 0.0])
    _, r, done = env.step([1.0])
    assert done and r == env.fall_reward < 0
    assert not env.truncated


def test_step_limit_truncates():
    env = make_env("pendulum", max_episode_steps=5)
    env.reset(0)
    flags = [env.step([0.0])[2] for _ in range(5)]
    assert flags == [False] * 4 + [True]
    assert env.truncated


def test_out_of_range_action_clipped_and_counted():
    a, b = make_env("cart"), make_env("cart")
    a.set_state([0.0, 0.0])
    b.set_state([0.0, 0.0])
    oa, ra, _ = a.step([3.0])
    ob, rb, _ = b.step([1.0])
    assert np.array_equal(oa, ob) and ra == rb
    assert a.clipped_actions == 1 and b.clipped_actions == 0


@pytest.mark.parametrize("name", ALL)
def test_dynamics_is_pure(name):
    env = make_env(name)
    env.reset(3)
    s = env.state
    s_copy = s.copy()
    a = np.array([0.37])
    assert np.array_equal(env.dynamics(s, a), env.dynamics(s, a))
    assert np.array_equal(s, s_copy)


@pytest.mark.parametrize("name", ALL)
def test_step_matches_iterated_dynamics(name):
    env = make_env(name)
    env.reset(11)
    s = env.state
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.uniform(-1, 1, size=1)
        s = env.dynamics(s, a)
        _, _, done = env.step(a)
        assert np.array_equal(env.state, s)
        if done:
            break


def test_pendulum_energy_conserved():
    env = make_env("pendulum")
    for start in ([math.pi / 2, 0.0], [0.3, 1.0], [2.5, -2.0]):
        env.set_state(start)
        e0 = env.energy(env.state)
        for _ in range(200):
            env.step([0.0])
            assert abs(env.energy(env.state) - e0) <= 0.01 * e0


def test_pendulum_cannot_lift_directly():
    # torque limit below m g l: holding horizontal needs more than max torque
    env = make_env("pendulum")
    assert env.torque_scale < env.mass * env.gravity * env.length


@pytest.mark.parametrize("name", ALL)
def test_observation_bounds(name):
    env = make_env(name)
    trig = {"pendulum": [0, 1], "cartpole_balance": [2, 3], "cartpole_swingup": [2, 3],
            "reacher_single": [0, 1, 3, 4], "cart": []}[name]
    rng = np.random.default_rng(1)
    for seed in range(3):
        obs = env.reset(seed)
        done = False
        while not done:
            assert np.isfinite(obs).all()
            assert np.all(np.abs(obs[trig]) <= 1.0)
            obs, r, done = env.step(rng.uniform(-1, 1, 1))
            assert math.isfinite(r)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["pendulum", "cart", "cartpole_swingup"]),
       st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(-1, 1))
def test_reward_continuous(name, raw, a):
    env = make_env(name)
    s = np.array(raw[: env.state_dim])
    if name == "pendulum":
        s[0] = 0.9 * s[0]  # stay away from the wrap at +-pi
    eps = 1e-7
    base = env.reward(s, np.array([a]))
    for i in range(env.state_dim):
        d = np.zeros(env.state_dim)
        d[i] = eps
        assert abs(env.reward(s + d, np.array([a])) - base) < 1e-5
    assert abs(env.reward(s, np.array([a + eps])) - base) < 1e-5


def test_reacher_bonus_and_planner_cost():
    env = make_env("reacher_single")
    s = np.array([0.5, 0.0, 0.52])
    assert env.reward(s, np.zeros(1)) == pytest.approx(1.0 - 0.02 ** 2)
    assert env.cost(s, np.zeros(1)) == pytest.approx(0.02 ** 2)
    far = np.array([0.5, 0.0, -2.0])
    assert env.cost(far, np.zeros(1)) == pytest.approx(-env.reward(far, np.zeros(1)))


def test_reacher_target_redrawn_per_episode():
    env = make_env("reacher_single")
    targets = {round(float((env.reset(s), env.state)[1][2]), 6) for s in range(10)}
    assert len(targets) == 10


def test_state_difference_wraps_angles():
    env = make_env("pendulum")
    d = env.state_difference(np.array([math.pi - 0.1, 0.0]), np.array([-math.pi + 0.1, 0.0]))
    assert d[0] == pytest.approx(-0.2)


class ZeroReward(Pendulum):
    def reward(self, state, action):
        return 0.0


def test_random_return_zero_reward():
    assert random_policy_return(ZeroReward(), 4, seed=0) == 0.0


def test_random_return_reproducible_and_validated():
    env = make_env("pendulum", max_episode_steps=50)
    assert random_policy_returns(env, 3, 5) == random_policy_returns(env, 3, 5)
    assert random_policy_return(env, 3, 5) == pytest.approx(np.mean(random_policy_returns(env, 3, 5)))
    with pytest.raises(ValueError):
        random_policy_return(env, 0, 5)

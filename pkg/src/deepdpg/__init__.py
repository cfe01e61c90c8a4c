"""Deep deterministic policy gradient on analytic control tasks, with an iLQG baseline."""

from .ddpg import Agent, OUProcess, ReplayBuffer, TrainingConfig, evaluate, train
from .envs import make_env
from .planner import PlannerConfig, mpc_rollout

__version__ = "0.1.0"
__all__ = ["Agent", "OUProcess", "ReplayBuffer", "TrainingConfig", "evaluate", "train", "make_env",
           "PlannerConfig", "mpc_rollout", "__version__"]

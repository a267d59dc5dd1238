"""Causal information prioritization for reinforcement learning, at desk scale."""

from .agent import AgentConfig, train, train_baseline_sac
from .causal import direct_lingam, fit_action_reward_weights, fit_reward_matrices
from .envs import EnvSpec, make_env_spec

__all__ = [
    "AgentConfig", "EnvSpec", "direct_lingam", "fit_action_reward_weights",
    "fit_reward_matrices", "make_env_spec", "train", "train_baseline_sac",
]
__version__ = "0.1.0"

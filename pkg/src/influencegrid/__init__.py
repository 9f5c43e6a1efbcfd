"""Multi-agent gridworld social dilemmas with counterfactual influence rewards.

The package bundles:

* deterministic gridworld engines and three environments (``grid``, ``envs``)
* recurrent actor-critic policies with hand-derived gradients (``nets``,
  ``policy``) and a supervised model of other agents (``moa``)
* counterfactual influence rewards in three variants plus divergence
  utilities (``influence``)
* evaluation metrics (``metrics``) and the experiment harness with its
  config format, logs and CLI (``config``, ``harness``, ``runio``, ``cli``)
"""

from .config import ExperimentConfig, load_config, parse_config
from .envs import Env, EnvConfig
from .errors import ConfigError, ContractError, NumericError
from .grid import GridState, Observation
from .harness import Runner, evaluate, run_experiment
from .influence import InfluenceConfig, jsd, kl, marginal_policy, mi_monte_carlo, pmi
from .metrics import (EpisodeSummary, TrajectoryLog, gini,
                      influence_reward_correlation, instantaneous_coordination,
                      speaker_consistency, summarize)
from .policy import (PolicyOutput, TrainConfig, actor_critic_update,
                     curriculum_weight, discounted_returns, sample)

__version__ = "0.1.0"

__all__ = [
    "Env", "EnvConfig", "EpisodeSummary", "ExperimentConfig", "GridState",
    "InfluenceConfig", "Observation", "PolicyOutput", "Runner", "TrainConfig",
    "TrajectoryLog", "ConfigError", "ContractError", "NumericError",
    "actor_critic_update", "curriculum_weight", "discounted_returns",
    "evaluate", "gini", "influence_reward_correlation",
    "instantaneous_coordination", "jsd", "kl", "load_config",
    "marginal_policy", "mi_monte_carlo", "parse_config", "pmi",
    "run_experiment", "sample", "speaker_consistency", "summarize",
]

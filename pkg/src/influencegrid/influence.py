"""Counterfactual social-influence rewards.

An influencer's reward is the divergence between an influencee's action
distribution conditioned on the influencer's realized action (or message)
and the influencee's marginal policy, obtained by averaging the conditional
distribution over every counterfactual alternative weighted by a prior.
Counterfactuals are enumerated exhaustively -- no sampling -- so the only
stochasticity is the environment's.

With the KL divergence and the influencer's own policy as the prior, the
per-step reward is an unbiased sample of the conditional mutual information
between the two agents' actions; ``mi_monte_carlo`` averages such samples.

All distributions are floored at ``EPS`` and renormalized before log-ratios
so deterministic policies cannot produce infinities.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError

EPS = 1e-9

KL = "kl"
JSD = "jsd"
PMI = "pmi"
DIVERGENCES = (KL, JSD, PMI)

BASIC = "basic"
COMM = "comm"
MOA = "moa"
NONE = "none"
VARIANTS = (NONE, BASIC, COMM, MOA)

PRIOR_INFLUENCER = "influencer"
PRIOR_UNIFORM = "uniform"
PRIORS = (PRIOR_INFLUENCER, PRIOR_UNIFORM)


@dataclass(frozen=True)
class InfluenceConfig:
    variant: str = NONE
    divergence: str = KL
    prior: str = PRIOR_INFLUENCER
    alpha: float = 1.0
    beta: float = 0.0
    curriculum_steps: int = 100_000
    influencers: tuple[int, ...] = (0,)   # basic variant only
    influencee_reward: bool = False
    visibility_gate: bool = True          # moa variant only
    log_pairwise: bool = False

    def validate(self, n_agents: int) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown influence variant {self.variant!r}")
        if self.divergence not in DIVERGENCES:
            raise ConfigError(f"unknown divergence {self.divergence!r}")
        if self.prior not in PRIORS:
            raise ConfigError(f"unknown counterfactual prior {self.prior!r}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be >= 0")
        if self.curriculum_steps < 1:
            raise ConfigError("curriculum_steps must be >= 1")
        if self.variant != NONE and n_agents < 2:
            raise ConfigError("influence rewards need at least 2 agents")
        if self.variant == BASIC:
            infl = set(self.influencers)
            if not infl or not infl <= set(range(n_agents)):
                raise ConfigError("influencers must be a nonempty subset of agent ids")
            if len(infl) >= n_agents:
                raise ConfigError("influencer and influencee sets must both be nonempty")


def smooth(dist: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Floor at eps and renormalize; guards log-ratios against zeros."""
    d = np.maximum(np.asarray(dist, dtype=float), eps)
    return d / d.sum()


def kl(p, q, eps: float = EPS) -> float:
    """Kullback-Leibler divergence sum(p ln p/q) in nats, >= 0."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ContractError("kl: distribution length mismatch")
    p, q = smooth(p, eps), smooth(q, eps)
    return float(np.sum(p * (np.log(p) - np.log(q))))


def jsd(p, q, eps: float = EPS) -> float:
    """Jensen-Shannon divergence: symmetric, bounded by ln 2."""
    p, q = smooth(p, eps), smooth(q, eps)
    m = 0.5 * (p + q)
    return 0.5 * kl(p, m, eps) + 0.5 * kl(q, m, eps)


def pmi(p_cond, p_marg, realized_action: int, eps: float = EPS) -> float:
    """Pointwise mutual information ln(p_cond[a]/p_marg[a]); may be negative."""
    p_cond, p_marg = smooth(p_cond, eps), smooth(p_marg, eps)
    if not 0 <= realized_action < len(p_cond):
        raise ContractError("realized action outside distribution support")
    denom = p_marg[realized_action]
    if denom <= 0.0:
        raise ContractError("marginal probability of realized action is zero")
    return float(np.log(p_cond[realized_action] / denom))


def marginal_policy(conditionals: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """Mix conditionals (K, A) with a prior (K,) over the full counterfactual set."""
    conditionals = np.asarray(conditionals, dtype=float)
    prior = np.asarray(prior, dtype=float)
    if conditionals.ndim != 2 or len(prior) != len(conditionals):
        raise ContractError("conditionals (K, A) and prior (K,) must align")
    if abs(prior.sum() - 1.0) > 1e-6 or np.any(prior < 0):
        raise ContractError("prior must be a normalized distribution")
    return prior @ conditionals


def pair_influence(conditionals: np.ndarray, prior: np.ndarray, realized_cf: int,
                   divergence: str = KL, realized_target: int | None = None) -> float:
    """Influence contribution from one influencee.

    ``conditionals[i]`` is the influencee's action distribution under
    counterfactual i; ``realized_cf`` indexes the realized action/message.
    PMI additionally needs the influencee's realized action.
    """
    marg = marginal_policy(conditionals, prior)
    cond = conditionals[realized_cf]
    if divergence == KL:
        return kl(cond, marg)
    if divergence == JSD:
        return jsd(cond, marg)
    if divergence == PMI:
        if realized_target is None:
            raise ContractError("pmi divergence requires the influencee's realized action")
        return pmi(cond, marg, realized_target)
    raise ConfigError(f"unknown divergence {divergence!r}")


@dataclass
class InfluenceResult:
    total: float = 0.0
    per_target: dict[int, float] = field(default_factory=dict)

    def add(self, target: int, value: float):
        self.per_target[target] = value
        self.total += value


def basic_influence(conditional_fns: dict[int, object], n_counterfactuals: int,
                    realized_action: int, prior: np.ndarray, divergence: str = KL,
                    realized_targets: dict[int, int] | None = None) -> InfluenceResult:
    """Same-step influence of one influencer on its influencees.

    ``conditional_fns[j]`` maps a counterfactual influencer action to
    influencee j's action distribution, with j's conditioning context
    (view + hidden state, captured before j acted) held fixed.  The
    contributions are summed over influencees.
    """
    result = InfluenceResult()
    for j, fn in conditional_fns.items():
        conditionals = np.stack([fn(a) for a in range(n_counterfactuals)])
        target = None if realized_targets is None else realized_targets.get(j)
        result.add(j, pair_influence(conditionals, prior, realized_action,
                                     divergence, target))
    return result


def comm_influence(conditional_fns: dict[int, object], n_symbols: int,
                   realized_symbol: int, prior: np.ndarray, divergence: str = KL,
                   realized_targets: dict[int, int] | None = None) -> InfluenceResult:
    """Influence of last step's message on every listener's current action.

    Identical arithmetic to the basic variant with counterfactuals ranging
    over the symbol vocabulary; every agent both influences and is
    influenced.  The caller credits the result to the step the message
    was emitted.
    """
    return basic_influence(conditional_fns, n_symbols, realized_symbol, prior,
                           divergence, realized_targets)


def moa_influence(predictions: np.ndarray, other_ids: list[int], realized_action: int,
                  prior: np.ndarray, divergence: str = KL,
                  visibility: dict[int, bool] | None = None,
                  realized_targets: dict[int, int] | None = None) -> InfluenceResult:
    """Influence estimated from the agent's own predictive model.

    ``predictions``: (K, N-1, A) -- the owner's predicted next-action
    distributions for each other agent under each of the K counterfactual
    own-actions.  With the visibility gate, agents outside the owner's
    field of view contribute zero.
    """
    result = InfluenceResult()
    for slot, j in enumerate(other_ids):
        if visibility is not None and not visibility.get(j, False):
            result.add(j, 0.0)
            continue
        target = None if realized_targets is None else realized_targets.get(j)
        result.add(j, pair_influence(predictions[:, slot, :], prior,
                                     realized_action, divergence, target))
    return result


def mi_monte_carlo(samples) -> float:
    """Mean of per-sample influence values.

    When the samples are KL influence rewards computed with the
    influencer's own policy as the counterfactual prior, this estimates
    the conditional mutual information between the agents' actions.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ContractError("mi_monte_carlo requires at least one sample")
    return float(samples.mean())

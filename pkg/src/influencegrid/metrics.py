"""Evaluation quantities: collective reward, equality, communication quality,
coordination mutual information, and influence/reward correlation.

All metrics are pure functions over immutable trajectory logs.  Metrics that
need data the log cannot provide return ``nan`` (the "no data" flag), which
serializes as ``nan`` in the tabular output.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ContractError

SYMBOL_ACTION = "symbol_action"
ACTION_ACTION = "action_action"
FILTER_ALL = "all"
FILTER_INFLUENTIAL = "influential"

# columns of the windowed metrics table, in emission order
METRIC_COLUMNS = ("step", "collective_reward", "gini", "r_times_eq", "sc",
                  "ic_sym_act", "ic_act_act", "ic_sym_act_influential", "rho")


@dataclass
class TrajectoryLog:
    """Time-major arrays of one run's records; shape (T, N) unless noted."""

    steps: np.ndarray        # (T,) global step counter
    episodes: np.ndarray     # (T,)
    actions: np.ndarray
    messages: np.ndarray     # -1 where comms are disabled
    extrinsic: np.ndarray
    influence: np.ndarray
    values: np.ndarray
    visible: np.ndarray      # visibility bitmasks
    received: np.ndarray | None = None   # influence received, needs pairwise logging

    @property
    def n_agents(self) -> int:
        return self.actions.shape[1]

    def slice_rows(self, mask: np.ndarray) -> "TrajectoryLog":
        return TrajectoryLog(
            steps=self.steps[mask], episodes=self.episodes[mask],
            actions=self.actions[mask], messages=self.messages[mask],
            extrinsic=self.extrinsic[mask], influence=self.influence[mask],
            values=self.values[mask], visible=self.visible[mask],
            received=None if self.received is None else self.received[mask],
        )


@dataclass
class EpisodeSummary:
    """Aggregates for one episode or one reporting window."""

    step: int
    per_agent_return: np.ndarray
    per_agent_influence: np.ndarray
    collective_reward: float
    gini: float
    equality_weighted: float
    metrics: dict[str, float] = field(default_factory=dict)


def gini(returns) -> float:
    """Mean absolute difference of returns over twice the total.

    0 is perfect equality, 1 maximal inequality.  Defined as 0 when every
    return is zero (no data to rank).  Negative inputs are a contract
    violation; clamping is the caller's choice.
    """
    e = np.asarray(returns, dtype=float)
    if np.any(e < 0):
        raise ContractError("gini is defined for nonnegative returns")
    total = e.sum()
    if total == 0.0:
        return 0.0
    diffs = np.abs(e[:, None] - e[None, :]).sum()
    return float(diffs / (2.0 * len(e) * total))


def entropy_nats(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def mi_from_joint(joint: np.ndarray) -> float:
    """Exact plug-in mutual information of a joint probability table, in nats."""
    joint = np.asarray(joint, dtype=float)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    return entropy_nats(px) + entropy_nats(py) - entropy_nats(joint.ravel())


def mi_from_counts(counts: np.ndarray, miller_madow: bool = True) -> float:
    """Empirical MI of a count table, optionally Miller-Madow bias corrected.

    Clamped at zero so the coordination metrics stay nonnegative.
    """
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if n <= 0:
        return float("nan")
    mi = mi_from_joint(counts / n)
    if miller_madow:
        kx = np.count_nonzero(counts.sum(axis=1))
        ky = np.count_nonzero(counts.sum(axis=0))
        kxy = np.count_nonzero(counts)
        mi += (kx + ky - kxy - 1) / (2.0 * n)
    return max(0.0, float(mi))


# ---------------------------------------------------------------------------
# communication metrics


def _sc_from_counts(counts: np.ndarray) -> float:
    """Speaker consistency for one agent from a (n_actions, n_symbols) count table."""
    h_max_a = np.log(counts.shape[0])
    h_max_m = np.log(counts.shape[1])
    sym_counts = counts.sum(axis=0)
    act_counts = counts.sum(axis=1)
    per_symbol = [1.0 - entropy_nats(counts[:, m] / sym_counts[m]) / h_max_a
                  for m in range(counts.shape[1]) if sym_counts[m] > 0]
    per_action = [1.0 - entropy_nats(counts[a, :] / act_counts[a]) / h_max_m
                  for a in range(counts.shape[0]) if act_counts[a] > 0]
    if not per_symbol or not per_action:
        return float("nan")
    return 0.5 * (float(np.mean(per_symbol)) + float(np.mean(per_action)))


def speaker_consistency(log: TrajectoryLog, n_actions: int, n_symbols: int) -> float:
    """How close to 1:1 each agent's same-step (action, symbol) pairing is.

    Per agent, the normalized entropies of p(action | symbol) and
    p(symbol | action) are averaged over observed symbols/actions and the
    complement taken, yielding a score in [0, 1]; agents are then averaged.
    nan when there is no communication data.
    """
    if n_symbols < 2 or n_actions < 2:
        return float("nan")
    scores = []
    for k in range(log.n_agents):
        msgs = log.messages[:, k]
        ok = msgs >= 0
        if not ok.any():
            continue
        counts = np.zeros((n_actions, n_symbols))
        np.add.at(counts, (log.actions[ok, k], msgs[ok]), 1.0)
        score = _sc_from_counts(counts)
        if not np.isnan(score):
            scores.append(score)
    return float(np.mean(scores)) if scores else float("nan")


def _pair_counts(x: np.ndarray, y: np.ndarray, nx: int, ny: int) -> np.ndarray:
    counts = np.zeros((nx, ny))
    np.add.at(counts, (x, y), 1.0)
    return counts


def instantaneous_coordination(log: TrajectoryLog, mode: str = SYMBOL_ACTION,
                               moment_filter: str = FILTER_ALL, *,
                               n_actions: int, n_symbols: int = 0,
                               min_steps: int = 20,
                               miller_madow: bool = True) -> float:
    """Max over ordered agent pairs of the empirical MI between one agent's
    symbol (or action) at t and another agent's action at t+1.

    With the "influential" filter only steps whose logged influence is at
    least the influencer's mean influence are kept.  nan when fewer than
    ``min_steps`` pairs remain for every agent pair.
    """
    if mode not in (SYMBOL_ACTION, ACTION_ACTION):
        raise ContractError(f"unknown coordination mode {mode!r}")
    if mode == SYMBOL_ACTION and n_symbols < 1:
        return float("nan")
    src = log.messages if mode == SYMBOL_ACTION else log.actions
    n_src = n_symbols if mode == SYMBOL_ACTION else n_actions
    t_ok = (log.episodes[:-1] == log.episodes[1:]) \
        & (log.steps[:-1] + 1 == log.steps[1:])
    best = float("nan")
    for k in range(log.n_agents):
        keep = t_ok & (src[:-1, k] >= 0)
        if moment_filter == FILTER_INFLUENTIAL:
            c_k = log.influence[:-1, k]
            keep = keep & (c_k >= log.influence[:, k].mean())
        elif moment_filter != FILTER_ALL:
            raise ContractError(f"unknown moment filter {moment_filter!r}")
        if keep.sum() < min_steps:
            continue
        for j in range(log.n_agents):
            if j == k:
                continue
            counts = _pair_counts(src[:-1][keep, k], log.actions[1:][keep, j],
                                  n_src, n_actions)
            mi = mi_from_counts(counts, miller_madow)
            if np.isnan(best) or mi > best:
                best = mi
    return best


def influence_reward_correlation(per_agent_influence_received,
                                 per_agent_return) -> float:
    """Spearman rank correlation (average ranks for ties); nan if degenerate."""
    x = np.asarray(per_agent_influence_received, dtype=float)
    y = np.asarray(per_agent_return, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise ContractError("correlation needs two equal-length vectors, n >= 3")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return float("nan")
    rho = stats.spearmanr(x, y).statistic
    return float(rho)


# ---------------------------------------------------------------------------
# windowed reporting


def summarize(log: TrajectoryLog, window: int, *, n_actions: int,
              n_symbols: int = 0, ic_min_steps: int = 20,
              miller_madow: bool = True) -> list[EpisodeSummary]:
    """Windowed metric stream; windows are aligned to the step counter."""
    if window < 1:
        raise ContractError("window must be >= 1")
    summaries = []
    if len(log.steps) == 0:
        return summaries
    start = (int(log.steps.min()) // window) * window
    last = int(log.steps.max())
    while start <= last:
        mask = (log.steps >= start) & (log.steps < start + window)
        if mask.any():
            summaries.append(window_summary(log.slice_rows(mask), start,
                                            n_actions=n_actions, n_symbols=n_symbols,
                                            ic_min_steps=ic_min_steps,
                                            miller_madow=miller_madow))
        start += window
    return summaries


def window_summary(chunk: TrajectoryLog, step: int, *, n_actions: int,
                   n_symbols: int = 0, ic_min_steps: int = 20,
                   miller_madow: bool = True) -> EpisodeSummary:
    per_return = chunk.extrinsic.sum(axis=0)
    per_influence = chunk.influence.sum(axis=0)
    collective = float(per_return.sum())
    # beam costs/fines can push returns negative; clamp for the equality index
    g = gini(np.maximum(per_return, 0.0))
    r_eq = collective * (1.0 - g)
    sc = speaker_consistency(chunk, n_actions, n_symbols)
    ic_kwargs = dict(n_actions=n_actions, n_symbols=n_symbols,
                     min_steps=ic_min_steps, miller_madow=miller_madow)
    ic_sym = instantaneous_coordination(chunk, SYMBOL_ACTION, FILTER_ALL, **ic_kwargs)
    ic_act = instantaneous_coordination(chunk, ACTION_ACTION, FILTER_ALL, **ic_kwargs)
    ic_sym_infl = instantaneous_coordination(chunk, SYMBOL_ACTION,
                                             FILTER_INFLUENTIAL, **ic_kwargs)
    if chunk.received is not None and chunk.n_agents >= 3:
        rho = influence_reward_correlation(chunk.received.sum(axis=0), per_return)
    else:
        rho = float("nan")
    return EpisodeSummary(
        step=step,
        per_agent_return=per_return,
        per_agent_influence=per_influence,
        collective_reward=collective,
        gini=g,
        equality_weighted=r_eq,
        metrics={
            "sc": sc, "ic_sym_act": ic_sym, "ic_act_act": ic_act,
            "ic_sym_act_influential": ic_sym_infl, "rho": rho,
        },
    )

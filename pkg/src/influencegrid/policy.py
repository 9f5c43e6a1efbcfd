"""Actor-critic training for the recurrent policies.

Each agent owns its own parameters (no weight sharing).  The update is
synchronous batched advantage actor-critic over fixed-length rollout
segments: policy-gradient loss with advantage R_t - V(s_t), value
regression, and entropy regularization, optimized by plain SGD with a
linearly annealed learning rate (momentum optional).

Reward routing per head:

* basic / moa variants -- the single environment head is trained on
  ``alpha * e + beta * c``;
* communication variant -- the environment head is trained on ``e`` alone
  while the message head is trained on ``alpha * e + beta * c``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets
from .errors import ContractError
from .nets import NetSpec, require_finite


@dataclass
class PolicyOutput:
    """One forward pass: distributions, value estimate(s), next hidden state."""

    action_dist: np.ndarray
    value: float
    next_state: np.ndarray
    message_dist: np.ndarray | None = None
    message_value: float | None = None


@dataclass
class StepCache:
    """Intermediates kept during acting for counterfactual replays."""

    f2: np.ndarray        # fc output feeding the recurrent cell
    extras: np.ndarray    # the non-visual input slots
    h_pre: np.ndarray     # hidden state before this step


def zero_state(spec: NetSpec) -> np.ndarray:
    return np.zeros(spec.hidden_width)


def forward(params, spec: NetSpec, window: np.ndarray, extras: np.ndarray,
            h: np.ndarray) -> tuple[PolicyOutput, StepCache]:
    """Single acting step.  Deterministic given (params, inputs, h)."""
    flat, _ = nets.conv_forward(params, spec, window)
    f2, _ = nets.fc_forward(params, flat)
    h_new, _ = nets.gru_step(params, "gru_", np.concatenate([f2, extras]), h)
    la = h_new @ params["act_w"] + params["act_b"]
    out = PolicyOutput(
        action_dist=nets.softmax(require_finite(la, "action_logits")),
        value=float(h_new @ params["val_w"] + params["val_b"][0]),
        next_state=h_new,
    )
    if spec.comm:
        lm = h_new @ params["msg_w"] + params["msg_b"]
        out.message_dist = nets.softmax(require_finite(lm, "message_logits"))
        out.message_value = float(h_new @ params["mval_w"] + params["mval_b"][0])
    return out, StepCache(f2=f2, extras=extras, h_pre=h)


def replay_action_dists(params, spec: NetSpec, cache: StepCache,
                        extras_batch: np.ndarray) -> np.ndarray:
    """Action distributions this agent would have produced under each variant
    of its non-visual inputs, from the same pre-step hidden state.

    The visual pathway is untouched, so row i with the realized extras
    reproduces the realized distribution bit for bit.
    """
    x = np.concatenate(
        [np.broadcast_to(cache.f2, (len(extras_batch), len(cache.f2))), extras_batch],
        axis=1,
    )
    h = np.broadcast_to(cache.h_pre, (len(extras_batch), len(cache.h_pre)))
    h_new, _ = nets.gru_step(params, "gru_", x, h)
    return nets.softmax(h_new @ params["act_w"] + params["act_b"])


def sample(dist: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index from a probability vector; seeded-reproducible."""
    dist = np.asarray(dist)
    if dist.ndim != 1 or abs(dist.sum() - 1.0) > 1e-6 or np.any(dist < 0):
        raise ContractError("sample() requires a normalized probability vector")
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(dist), u, side="right"), len(dist) - 1))


def discounted_returns(rewards, gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    """R_t = r_t + gamma * R_{t+1}, seeded at the end by ``bootstrap``."""
    if not 0.0 <= gamma <= 1.0:
        raise ContractError("gamma must be in [0, 1]")
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    acc = bootstrap
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def curriculum_weight(step: int, curriculum_steps: int, beta: float) -> float:
    """Influence weight ramped linearly from 0 to beta over the curriculum."""
    if curriculum_steps < 1:
        raise ContractError("curriculum length must be >= 1")
    if beta < 0:
        raise ContractError("beta must be >= 0")
    return beta * min(1.0, step / curriculum_steps)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    total_steps: int = 20000
    rollout_len: int = 32
    gamma: float = 0.99
    lr_init: float = 1e-3
    lr_end: float = 1e-4
    momentum: float = 0.0
    max_grad_norm: float = 10.0
    value_coef: float = 0.5
    entropy_coef: float = 1e-3
    comm_entropy_coef: float = 1e-3
    comm_loss_weight: float = 1.0
    moa_loss_weight: float = 1.0
    fc_width: int = 32
    hidden_width: int = 32
    workers: int = 1
    metrics_window: int = 1000

    def lr_at(self, step: int) -> float:
        frac = min(1.0, step / max(1, self.total_steps))
        return self.lr_init + frac * (self.lr_end - self.lr_init)


@dataclass
class RolloutBatch:
    """One agent's rollout segment, ready for a gradient step.

    Advantages are computed from the rollout's own value estimates and enter
    the policy-gradient term as constants (the usual actor-critic baseline);
    left as None they default to returns minus freshly recomputed values.
    """

    windows: np.ndarray                 # (T, V, V, C)
    extras: np.ndarray                  # (T, E)
    h0: np.ndarray                      # (H,)
    actions: np.ndarray                 # (T,)
    env_returns: np.ndarray             # (T,)
    env_advantages: np.ndarray | None = None
    messages: np.ndarray | None = None  # (T,)
    msg_returns: np.ndarray | None = None
    msg_advantages: np.ndarray | None = None
    moa_extras: np.ndarray | None = None    # (T, N*A) joint actions taken at t
    moa_h0: np.ndarray | None = None
    moa_targets: np.ndarray | None = None   # (T, N-1) others' actions at t+1
    moa_mask: np.ndarray | None = None      # (T, N-1) bool


def _head_logit_grad(pi, logpi, actions, adv, coef_pg, ent_coef, T):
    onehot = np.zeros_like(pi)
    onehot[np.arange(T), actions] = 1.0
    entropy = -(pi * logpi).sum(axis=1)
    dla = coef_pg * adv[:, None] * (pi - onehot) / T
    dla += ent_coef * pi * (logpi + entropy[:, None]) / T
    return dla, entropy


def loss_and_grad(params, spec: NetSpec, batch: RolloutBatch, hyper: TrainConfig,
                  moa_weight: float | None = None):
    """Total loss over one segment plus hand-derived gradients for every tensor.

    ``moa_weight`` overrides ``hyper.moa_loss_weight`` (used for pure
    prediction-head updates).  Returns (report, grads).
    """
    T = len(batch.actions)
    grads = nets.zero_grads(params)
    report: dict[str, float] = {}

    flat, conv_cache = nets.conv_forward(params, spec, batch.windows)
    dflat = np.zeros_like(flat)

    # policy branch
    f2, fc_cache = nets.fc_forward(params, flat)
    xs = np.concatenate([f2, batch.extras], axis=1)
    h = batch.h0
    gru_caches = []
    hs = np.empty((T, spec.hidden_width))
    for t in range(T):
        h, cache = nets.gru_step(params, "gru_", xs[t], h)
        gru_caches.append(cache)
        hs[t] = h

    la = hs @ params["act_w"] + params["act_b"]
    logpi = nets.log_softmax(la)
    pi = np.exp(logpi)
    ve = hs @ params["val_w"] + params["val_b"][0]
    adv = batch.env_advantages if batch.env_advantages is not None \
        else batch.env_returns - ve
    pg = float(-(logpi[np.arange(T), batch.actions] * adv).mean())
    vloss = float(hyper.value_coef * ((ve - batch.env_returns) ** 2).mean())

    dla, entropy = _head_logit_grad(pi, logpi, batch.actions, adv,
                                    1.0, hyper.entropy_coef, T)
    ent = float(entropy.mean())
    dve = 2.0 * hyper.value_coef * (ve - batch.env_returns) / T
    grads["act_w"] += hs.T @ dla
    grads["act_b"] += dla.sum(axis=0)
    grads["val_w"] += hs.T @ dve
    grads["val_b"] += dve.sum(keepdims=True)
    dhs = dla @ params["act_w"].T + dve[:, None] * params["val_w"][None, :]

    report.update(pg_loss=pg, value_loss=vloss, entropy=ent)
    total = pg + vloss - hyper.entropy_coef * ent

    if spec.comm:
        if batch.messages is None or batch.msg_returns is None:
            raise ContractError("comm-enabled batch requires messages and msg_returns")
        lm = hs @ params["msg_w"] + params["msg_b"]
        logpm = nets.log_softmax(lm)
        pm = np.exp(logpm)
        vm = hs @ params["mval_w"] + params["mval_b"][0]
        madv = batch.msg_advantages if batch.msg_advantages is not None \
            else batch.msg_returns - vm
        pg_m = float(-(logpm[np.arange(T), batch.messages] * madv).mean())
        v_m = float(hyper.value_coef * ((vm - batch.msg_returns) ** 2).mean())
        w = hyper.comm_loss_weight
        dlm, m_entropy = _head_logit_grad(pm, logpm, batch.messages, madv,
                                          w, hyper.comm_entropy_coef, T)
        ent_m = float(m_entropy.mean())
        dvm = 2.0 * w * hyper.value_coef * (vm - batch.msg_returns) / T
        grads["msg_w"] += hs.T @ dlm
        grads["msg_b"] += dlm.sum(axis=0)
        grads["mval_w"] += hs.T @ dvm
        grads["mval_b"] += dvm.sum(keepdims=True)
        dhs += dlm @ params["msg_w"].T + dvm[:, None] * params["mval_w"][None, :]
        report.update(msg_pg_loss=pg_m, msg_value_loss=v_m, msg_entropy=ent_m)
        total += w * (pg_m + v_m) - hyper.comm_entropy_coef * ent_m

    dh = np.zeros(spec.hidden_width)
    df2 = np.empty_like(f2)
    for t in range(T - 1, -1, -1):
        dx, dh = nets.gru_backward(params, grads, "gru_", gru_caches[t], dhs[t] + dh)
        df2[t] = dx[: spec.fc_width]
    dflat += nets.fc_backward(params, grads, fc_cache, df2)

    # prediction branch (shared convolution)
    w_moa = hyper.moa_loss_weight if moa_weight is None else moa_weight
    if spec.moa and batch.moa_extras is not None:
        from .moa import moa_loss_and_grad_from_flat
        ce = moa_loss_and_grad_from_flat(params, spec, grads, flat, dflat, batch, w_moa)
        report["moa_loss"] = ce
        total += w_moa * ce

    nets.conv_backward(params, grads, conv_cache, dflat)

    report["total_loss"] = total
    for term, value in report.items():
        require_finite(value, term)
    return report, grads


@dataclass
class OptState:
    momentum: dict[str, np.ndarray] = field(default_factory=dict)


def apply_grads(params, grads, lr: float, hyper: TrainConfig, opt: OptState) -> float:
    """Clipped SGD step (optionally with momentum); returns the grad norm."""
    sq = 0.0
    for g in grads.values():
        require_finite(g, "gradient")
        sq += float((g * g).sum())
    norm = np.sqrt(sq)
    scale = 1.0 if norm <= hyper.max_grad_norm else hyper.max_grad_norm / norm
    for k, g in grads.items():
        step = g * scale
        if hyper.momentum > 0.0:
            buf = opt.momentum.setdefault(k, np.zeros_like(g))
            buf *= hyper.momentum
            buf += step
            step = buf
        params[k] -= lr * step
    return float(norm)


def actor_critic_update(params, spec: NetSpec, batch: RolloutBatch,
                        hyper: TrainConfig, lr: float,
                        opt: OptState | None = None):
    """One synchronous A2C gradient step on a rollout segment.

    Returns (params, loss_report); ``params`` is updated in place.
    """
    report, grads = loss_and_grad(params, spec, batch, hyper)
    report["grad_norm"] = apply_grads(params, grads, lr, hyper, opt or OptState())
    return params, report

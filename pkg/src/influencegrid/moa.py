"""Model of other agents: supervised next-action prediction.

The predictor shares the policy's convolution, adds its own fully connected
and recurrent layers, and outputs one softmax block per other agent over the
action set.  It trains on observed trajectories with cross-entropy loss,
optionally restricted to (step, agent) pairs where the predicted agent was
inside the owner's field of view.
"""
from __future__ import annotations

import numpy as np

from . import nets
from .nets import NetSpec, require_finite


def zero_state(spec: NetSpec) -> np.ndarray:
    return np.zeros(spec.hidden_width)


def moa_forward(params, spec: NetSpec, window: np.ndarray, joint_actions,
                h: np.ndarray):
    """Predictive distributions over every other agent's next action.

    ``joint_actions`` are the actions all N agents took this step.  Returns
    ((N-1, A) distributions ordered by the other agents' ids, next hidden
    state, and a replay cache).
    """
    flat, _ = nets.conv_forward(params, spec, window)
    f, _ = nets.moa_fc_forward(params, flat)
    extras = nets.one_hot_block(joint_actions, spec.n_actions)
    h_new, _ = nets.gru_step(params, "moa_gru_", np.concatenate([f, extras]), h)
    logits = h_new @ params["moa_out_w"] + params["moa_out_b"]
    dists = nets.softmax(require_finite(logits, "moa_logits")
                         .reshape(spec.n_agents - 1, spec.n_actions))
    return dists, h_new, MoaStepCache(f=f, h_pre=h)


class MoaStepCache:
    """Inputs needed to re-run one predictor step under counterfactual actions."""

    __slots__ = ("f", "h_pre")

    def __init__(self, f, h_pre):
        self.f = f
        self.h_pre = h_pre


def replay_moa_dists(params, spec: NetSpec, cache: MoaStepCache,
                     joint_action_batch: np.ndarray) -> np.ndarray:
    """Predictions for each row of ``joint_action_batch`` (B, N), from the
    same pre-step hidden state and visual features.  Returns (B, N-1, A)."""
    b = len(joint_action_batch)
    extras = nets.one_hot_rows(np.asarray(joint_action_batch), spec.n_actions)
    x = np.concatenate([np.broadcast_to(cache.f, (b, len(cache.f))), extras], axis=1)
    h = np.broadcast_to(cache.h_pre, (b, len(cache.h_pre)))
    h_new, _ = nets.gru_step(params, "moa_gru_", x, h)
    logits = h_new @ params["moa_out_w"] + params["moa_out_b"]
    return nets.softmax(logits.reshape(b, spec.n_agents - 1, spec.n_actions))


def moa_loss(predictions: np.ndarray, realized_actions: np.ndarray,
             visibility_mask: np.ndarray) -> float:
    """Mean cross-entropy -ln p(realized) over unmasked (step, agent) pairs.

    ``predictions``: (T, N-1, A); ``realized_actions``: (T, N-1);
    ``visibility_mask``: (T, N-1) bool, True = include.  All pairs masked
    is the no-data case, defined as 0.
    """
    mask = np.asarray(visibility_mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        return 0.0
    t_idx, j_idx = np.nonzero(mask)
    p = predictions[t_idx, j_idx, realized_actions[t_idx, j_idx]]
    return float(-np.log(np.maximum(p, 1e-300)).mean())


def moa_loss_and_grad_from_flat(params, spec: NetSpec, grads, flat, dflat,
                                batch, weight: float) -> float:
    """Cross-entropy over a rollout segment; accumulates gradients in place.

    Shares the already-computed convolution output ``flat``; the gradient
    w.r.t. it is added to ``dflat`` so the caller can backprop the shared
    convolution once.  Returns the unweighted loss value.
    """
    T = len(batch.moa_extras)
    f, fc_cache = nets.moa_fc_forward(params, flat)
    xs = np.concatenate([f, batch.moa_extras], axis=1)
    h = batch.moa_h0
    caches = []
    hs = np.empty((T, spec.hidden_width))
    for t in range(T):
        h, cache = nets.gru_step(params, "moa_gru_", xs[t], h)
        caches.append(cache)
        hs[t] = h

    logits = (hs @ params["moa_out_w"] + params["moa_out_b"]).reshape(
        T, spec.n_agents - 1, spec.n_actions)
    logp = nets.log_softmax(logits)
    p = np.exp(logp)
    mask = batch.moa_mask.astype(float)
    n_pairs = max(1.0, mask.sum())
    t_idx, j_idx = np.meshgrid(np.arange(T), np.arange(spec.n_agents - 1), indexing="ij")
    picked = logp[t_idx, j_idx, batch.moa_targets]
    ce = float(-(picked * mask).sum() / n_pairs)

    onehot = np.zeros_like(p)
    onehot[t_idx, j_idx, batch.moa_targets] = 1.0
    dlogits = weight * mask[:, :, None] * (p - onehot) / n_pairs
    dlogits = dlogits.reshape(T, -1)
    grads["moa_out_w"] += hs.T @ dlogits
    grads["moa_out_b"] += dlogits.sum(axis=0)
    dhs = dlogits @ params["moa_out_w"].T

    dh = np.zeros(spec.hidden_width)
    df = np.empty_like(f)
    for t in range(T - 1, -1, -1):
        dx, dh = nets.gru_backward(params, grads, "moa_gru_", caches[t], dhs[t] + dh)
        df[t] = dx[: spec.fc_width]
    dflat += nets.moa_fc_backward(params, grads, fc_cache, df)
    return ce


def moa_update(params, spec: NetSpec, batch, weight: float, lr: float):
    """Standalone supervised gradient step on ``weight * moa_loss``.

    With weight 0 the parameters are untouched.  Gradients flow into the
    shared convolution (the auxiliary-task pathway).  Returns (params, loss).
    """
    grads = nets.zero_grads(params)
    flat, conv_cache = nets.conv_forward(params, spec, batch.windows)
    dflat = np.zeros_like(flat)
    ce = moa_loss_and_grad_from_flat(params, spec, grads, flat, dflat, batch, weight)
    require_finite(ce, "moa_loss")
    if weight != 0.0:
        nets.conv_backward(params, grads, conv_cache, dflat)
        for k in params:
            if k.startswith(("moa_", "conv_")):
                require_finite(grads[k], "moa_gradient")
                params[k] -= lr * grads[k]
    return params, ce

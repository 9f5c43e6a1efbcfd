"""Recurrent actor-critic function approximators in plain numpy.

Architecture per agent: a 3x3/stride-1 convolution with 6 output channels
over the one-hot observation window, two fully connected layers, a gated
recurrent cell, and linear heads (action logits + value; optionally message
logits + message value).  The other-agent action predictor ("moa") shares
the convolution and has its own fully connected + recurrent stack with one
softmax block per other agent.

Gradients are hand-derived for this fixed architecture and checked against
central finite differences in the test suite.  Everything is float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError
from .grid import N_CELL_KINDS, Observation

# observation channels: one per cell kind plus an overlay marking other agents
N_CHANNELS = N_CELL_KINDS + 1
_EYE = np.eye(N_CHANNELS)


@dataclass(frozen=True)
class NetSpec:
    """Shape contract for one agent's networks."""

    view: int
    n_actions: int
    n_agents: int
    n_symbols: int = 0            # 0 disables the communication heads
    basic_action_input: bool = False   # extra input slot for influencers' current actions
    fc_width: int = 32
    hidden_width: int = 32
    conv_channels: int = 6
    moa: bool = False

    @property
    def comm(self) -> bool:
        return self.n_symbols > 0

    @property
    def conv_flat(self) -> int:
        return (self.view - 2) ** 2 * self.conv_channels

    @property
    def extra_dim(self) -> int:
        d = self.n_agents * self.n_actions
        if self.comm:
            d += self.n_agents * self.n_symbols
        if self.basic_action_input:
            d += self.n_agents * self.n_actions
        return d

    @property
    def gru_in(self) -> int:
        return self.fc_width + self.extra_dim

    @property
    def moa_gru_in(self) -> int:
        return self.fc_width + self.n_agents * self.n_actions

    @property
    def moa_out(self) -> int:
        return (self.n_agents - 1) * self.n_actions


def encode_window(obs: Observation) -> np.ndarray:
    """One-hot (V, V, C) encoding of an observation window plus agent overlay."""
    enc = _EYE[obs.window]
    view = obs.window.shape[0]
    anchor = (view - 1, view // 2)
    for aid, (wr, wc) in obs.visible_agents:
        if (wr, wc) != anchor:
            enc[wr, wc, N_CELL_KINDS] = 1.0
    return enc


def one_hot_block(values, width: int) -> np.ndarray:
    """Flattened (N*width,) one-hot of ``values``; negative entries stay zero."""
    values = np.asarray(values)
    out = np.zeros((len(values), width))
    rows = np.nonzero(values >= 0)[0]
    out[rows, values[rows]] = 1.0
    return out.ravel()


def one_hot_rows(mat: np.ndarray, width: int) -> np.ndarray:
    """(B, N) integer matrix to (B, N*width) one-hot rows."""
    b, n = mat.shape
    out = np.zeros((b, n, width))
    rows, cols = np.nonzero(mat >= 0)
    out[rows, cols, mat[rows, cols]] = 1.0
    return out.reshape(b, n * width)


def encode_extras(spec: NetSpec, prev_actions, prev_messages=None, cur_actions=None) -> np.ndarray:
    parts = [one_hot_block(prev_actions, spec.n_actions)]
    if spec.comm:
        msgs = prev_messages if prev_messages is not None and len(prev_messages) \
            else np.full(spec.n_agents, -1)
        parts.append(one_hot_block(msgs, spec.n_symbols))
    if spec.basic_action_input:
        cur = cur_actions if cur_actions is not None else np.full(spec.n_agents, -1)
        parts.append(one_hot_block(cur, spec.n_actions))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# parameters


def _gru_shapes(prefix: str, g_in: int, width: int) -> dict[str, tuple[int, ...]]:
    # gate projections fused along the output axis, ordered [reset|update|cand];
    # the candidate's recurrent projection stays separate (it sees r * h)
    return {
        f"{prefix}w": (g_in, 3 * width),
        f"{prefix}urz": (width, 2 * width),
        f"{prefix}uc": (width, width),
        f"{prefix}b": (3 * width,),
    }


def param_shapes(spec: NetSpec) -> dict[str, tuple[int, ...]]:
    F, H = spec.fc_width, spec.hidden_width
    shapes = {
        "conv_w": (3, 3, N_CHANNELS, spec.conv_channels),
        "conv_b": (spec.conv_channels,),
        "fc1_w": (spec.conv_flat, F), "fc1_b": (F,),
        "fc2_w": (F, F), "fc2_b": (F,),
        "act_w": (H, spec.n_actions), "act_b": (spec.n_actions,),
        "val_w": (H,), "val_b": (1,),
    }
    shapes.update(_gru_shapes("gru_", spec.gru_in, H))
    if spec.comm:
        shapes.update({
            "msg_w": (H, spec.n_symbols), "msg_b": (spec.n_symbols,),
            "mval_w": (H,), "mval_b": (1,),
        })
    if spec.moa:
        shapes.update({"moa_fc_w": (spec.conv_flat, F), "moa_fc_b": (F,)})
        shapes.update(_gru_shapes("moa_gru_", spec.moa_gru_in, H))
        shapes.update({"moa_out_w": (H, spec.moa_out), "moa_out_b": (spec.moa_out,)})
    return shapes


# linear output heads start at zero so untrained policies are exactly uniform
HEAD_NAMES = ("act_w", "act_b", "val_w", "val_b", "msg_w", "msg_b",
              "mval_w", "mval_b", "moa_out_w", "moa_out_b")


def init_params(spec: NetSpec, rng: np.random.Generator, zero_heads: bool = True) -> dict[str, np.ndarray]:
    params = {}
    for name, shape in param_shapes(spec).items():
        is_bias = name.rsplit("_", 1)[-1].startswith("b")
        if is_bias or (zero_heads and name in HEAD_NAMES):
            params[name] = np.zeros(shape)
        else:
            fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[:-1]))
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)
    return params


def zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def flatten(params: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def assign_flat(params: dict[str, np.ndarray], vec: np.ndarray) -> None:
    i = 0
    for k in sorted(params):
        n = params[k].size
        params[k][...] = vec[i:i + n].reshape(params[k].shape)
        i += n


# ---------------------------------------------------------------------------
# primitives


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def conv_forward(params, spec: NetSpec, windows: np.ndarray):
    """Shared convolution as an im2col matmul.

    ``windows``: (..., V, V, C) -> flat (..., P) + cache.
    """
    win = sliding_window_view(windows, (3, 3), axis=(-3, -2))  # (..., S, S, C, 3, 3)
    k = spec.conv_channels
    w2 = params["conv_w"].transpose(2, 0, 1, 3).reshape(-1, k)
    cols = win.reshape(-1, w2.shape[0])
    pre = (cols @ w2 + params["conv_b"]).reshape(*win.shape[:-3], k)
    act = np.maximum(pre, 0.0)
    flat = act.reshape(*windows.shape[:-3], spec.conv_flat)
    return flat, (cols, pre)


def conv_backward(params, grads, cache, dflat):
    cols, pre = cache
    k = pre.shape[-1]
    dpre = (dflat.reshape(pre.shape) * (pre > 0.0)).reshape(-1, k)
    c_in = params["conv_w"].shape[2]
    dw2 = cols.T @ dpre
    grads["conv_w"] += dw2.reshape(c_in, 3, 3, k).transpose(1, 2, 0, 3)
    grads["conv_b"] += dpre.sum(axis=0)


def fc_forward(params, flat: np.ndarray):
    p1 = flat @ params["fc1_w"] + params["fc1_b"]
    f1 = np.maximum(p1, 0.0)
    p2 = f1 @ params["fc2_w"] + params["fc2_b"]
    f2 = np.maximum(p2, 0.0)
    return f2, (flat, p1, f1, p2)


def fc_backward(params, grads, cache, df2):
    flat, p1, f1, p2 = cache
    dp2 = df2 * (p2 > 0.0)
    grads["fc2_w"] += _mat(f1).T @ _mat(dp2)
    grads["fc2_b"] += _mat(dp2).sum(axis=0)
    dp1 = (dp2 @ params["fc2_w"].T) * (p1 > 0.0)
    grads["fc1_w"] += _mat(flat).T @ _mat(dp1)
    grads["fc1_b"] += _mat(dp1).sum(axis=0)
    return dp1 @ params["fc1_w"].T


def moa_fc_forward(params, flat: np.ndarray):
    p1 = flat @ params["moa_fc_w"] + params["moa_fc_b"]
    return np.maximum(p1, 0.0), (flat, p1)


def moa_fc_backward(params, grads, cache, df):
    flat, p1 = cache
    dp1 = df * (p1 > 0.0)
    grads["moa_fc_w"] += _mat(flat).T @ _mat(dp1)
    grads["moa_fc_b"] += _mat(dp1).sum(axis=0)
    return dp1 @ params["moa_fc_w"].T


def _mat(x: np.ndarray) -> np.ndarray:
    """View (..., D) as a 2-D matrix for weight-gradient accumulation."""
    return x.reshape(-1, x.shape[-1])


def gru_step(params, prefix: str, x: np.ndarray, h: np.ndarray):
    """One recurrent step.  x: (..., G), h: (..., H).  Returns h' and a cache."""
    width = h.shape[-1]
    xw = x @ params[prefix + "w"] + params[prefix + "b"]
    hu = h @ params[prefix + "urz"]
    r = _sigmoid(xw[..., :width] + hu[..., :width])
    z = _sigmoid(xw[..., width:2 * width] + hu[..., width:])
    hc = np.tanh(xw[..., 2 * width:] + (r * h) @ params[prefix + "uc"])
    h_new = z * h + (1.0 - z) * hc
    return h_new, (x, h, r, z, hc)


def gru_backward(params, grads, prefix: str, cache, dh_new):
    """Backward through one recurrent step; returns (dx, dh)."""
    x, h, r, z, hc = cache
    squeeze = x.ndim == 1
    if squeeze:
        x, h, r, z, hc, dh_new = (a[None] for a in (x, h, r, z, hc, dh_new))
    width = h.shape[-1]
    dz = dh_new * (h - hc)
    dhc = dh_new * (1.0 - z)
    dh = dh_new * z
    dac = dhc * (1.0 - hc * hc)
    drh = dac @ params[prefix + "uc"].T
    grads[prefix + "uc"] += (r * h).T @ dac
    dr = drh * h
    dh = dh + drh * r
    dxw = np.empty((x.shape[0], 3 * width))
    dxw[:, :width] = dr * r * (1.0 - r)
    dxw[:, width:2 * width] = dz * z * (1.0 - z)
    dxw[:, 2 * width:] = dac
    grads[prefix + "w"] += x.T @ dxw
    grads[prefix + "b"] += dxw.sum(axis=0)
    dhu = dxw[:, :2 * width]
    grads[prefix + "urz"] += h.T @ dhu
    dh = dh + dhu @ params[prefix + "urz"].T
    dx = dxw @ params[prefix + "w"].T
    if squeeze:
        return dx[0], dh[0]
    return dx, dh


def require_finite(value, term: str):
    if not np.all(np.isfinite(value)):
        raise NumericError("non-finite value encountered", term=term)
    return value

"""Line-oriented run artifacts: trajectory logs and windowed metric tables.

Both files are comma-separated with a header row.  Floats are written with
``repr`` so parsing them back yields the exact same float64 -- metrics
recomputed from a trajectory log equal the metrics emitted during the run,
byte for byte.

Trajectory columns (one row per step and agent, ordered by step then agent):

    step, episode, agent, action, message, e, c, value, visible[, recv]

``message`` is -1 when communication is disabled, ``visible`` is a bitmask
over agent ids (bit j set when agent j was inside this row's agent's view),
and ``recv`` (present only with pairwise influence logging) is the influence
this agent received this step, summed over influencers.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ContractError
from .metrics import METRIC_COLUMNS, EpisodeSummary, TrajectoryLog

TRAJECTORY_COLUMNS = ("step", "episode", "agent", "action", "message",
                      "e", "c", "value", "visible")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_trajectory(path, log: TrajectoryLog) -> None:
    columns = TRAJECTORY_COLUMNS + (("recv",) if log.received is not None else ())
    lines = [",".join(columns)]
    for t in range(len(log.steps)):
        for k in range(log.n_agents):
            row = [
                str(int(log.steps[t])), str(int(log.episodes[t])), str(k),
                str(int(log.actions[t, k])), str(int(log.messages[t, k])),
                _fmt(log.extrinsic[t, k]), _fmt(log.influence[t, k]),
                _fmt(log.values[t, k]), str(int(log.visible[t, k])),
            ]
            if log.received is not None:
                row.append(_fmt(log.received[t, k]))
            lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path) -> TrajectoryLog:
    lines = Path(path).read_text().splitlines()
    header = tuple(lines[0].split(","))
    if header[:9] != TRAJECTORY_COLUMNS:
        raise ContractError(f"{path}: unexpected trajectory header {header}")
    has_recv = len(header) == 10 and header[9] == "recv"
    rows = [line.split(",") for line in lines[1:] if line]
    if not rows:
        return TrajectoryLog(*(np.zeros((0,)) for _ in range(2)),
                             *(np.zeros((0, 0)) for _ in range(6)))
    n_agents = max(int(r[2]) for r in rows) + 1
    if len(rows) % n_agents != 0:
        raise ContractError(f"{path}: ragged trajectory (rows not a multiple of N)")
    t_total = len(rows) // n_agents
    log = TrajectoryLog(
        steps=np.zeros(t_total, dtype=np.int64),
        episodes=np.zeros(t_total, dtype=np.int64),
        actions=np.zeros((t_total, n_agents), dtype=np.int64),
        messages=np.zeros((t_total, n_agents), dtype=np.int64),
        extrinsic=np.zeros((t_total, n_agents)),
        influence=np.zeros((t_total, n_agents)),
        values=np.zeros((t_total, n_agents)),
        visible=np.zeros((t_total, n_agents), dtype=np.int64),
        received=np.zeros((t_total, n_agents)) if has_recv else None,
    )
    for i, r in enumerate(rows):
        t, k = divmod(i, n_agents)
        if int(r[2]) != k:
            raise ContractError(f"{path}: rows out of (step, agent) order")
        log.steps[t] = int(r[0])
        log.episodes[t] = int(r[1])
        log.actions[t, k] = int(r[3])
        log.messages[t, k] = int(r[4])
        log.extrinsic[t, k] = float(r[5])
        log.influence[t, k] = float(r[6])
        log.values[t, k] = float(r[7])
        log.visible[t, k] = int(r[8])
        if has_recv:
            log.received[t, k] = float(r[9])
    return log


def write_metrics(path, summaries: list[EpisodeSummary]) -> None:
    lines = [",".join(METRIC_COLUMNS)]
    for s in summaries:
        lines.append(",".join([
            str(int(s.step)), _fmt(s.collective_reward), _fmt(s.gini),
            _fmt(s.equality_weighted), _fmt(s.metrics["sc"]),
            _fmt(s.metrics["ic_sym_act"]), _fmt(s.metrics["ic_act_act"]),
            _fmt(s.metrics["ic_sym_act_influential"]), _fmt(s.metrics["rho"]),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")

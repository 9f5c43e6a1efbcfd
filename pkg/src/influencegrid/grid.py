"""Deterministic, seedable gridworld engine.

Maps are ASCII art, one character per cell:

    ``.`` empty   ``A`` apple   ``W`` waste   ``#`` wall
    ``~`` river   ``B`` box wall   digits = agent start positions

Agents occupy cells, carry an orientation (N/E/S/W) and act simultaneously.
Movement conflicts are resolved in a random permutation drawn from the
episode RNG; losers stay in place.  Beams are straight rays of length
``BEAM_LENGTH`` along the firer's orientation, blocked by walls.

All randomness is owned by :class:`GridState` (a ``numpy`` PCG64 generator),
so a cloned state replays bit-identically.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .errors import ConfigError, ContractError


class CellKind(IntEnum):
    EMPTY = 0
    APPLE = 1
    WASTE = 2
    WALL = 3
    RIVER = 4
    BOXWALL = 5


N_CELL_KINDS = 6

CHAR_TO_CELL = {
    ".": CellKind.EMPTY,
    "A": CellKind.APPLE,
    "W": CellKind.WASTE,
    "#": CellKind.WALL,
    "~": CellKind.RIVER,
    "B": CellKind.BOXWALL,
}
CELL_TO_CHAR = {v: k for k, v in CHAR_TO_CELL.items()}

# Cells an agent can stand on.
IMPASSABLE = (CellKind.WALL, CellKind.BOXWALL)


class Orientation(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3


# Base action set shared by every environment; kinds may append extras.
STAY = 0
MOVE_UP = 1
MOVE_DOWN = 2
MOVE_LEFT = 3
MOVE_RIGHT = 4
ROTATE_CW = 5
ROTATE_CCW = 6
FIRE_FINE = 7
N_BASE_ACTIONS = 8

BASE_ACTION_NAMES = [
    "stay", "up", "down", "left", "right", "rot_cw", "rot_ccw", "fine_beam",
]

MOVE_DELTAS = {
    MOVE_UP: (-1, 0),
    MOVE_DOWN: (1, 0),
    MOVE_LEFT: (0, -1),
    MOVE_RIGHT: (0, 1),
}

ORIENT_DELTAS = {
    Orientation.N: (-1, 0),
    Orientation.E: (0, 1),
    Orientation.S: (1, 0),
    Orientation.W: (0, -1),
}

BEAM_LENGTH = 5

APPLE_REWARD = 1.0
BEAM_COST = -1.0
FINE_PENALTY = -50.0


@dataclass
class AgentPose:
    id: int
    row: int
    col: int
    orientation: Orientation = Orientation.N

    @property
    def position(self) -> tuple[int, int]:
        return (self.row, self.col)


@dataclass(frozen=True)
class Event:
    kind: str
    agent: int | None = None
    cell: tuple[int, int] | None = None


APPLE_EATEN = "apple_eaten"
BEAM_FIRED = "beam_fired"
AGENT_FINED = "agent_fined"
WASTE_CLEANED = "waste_cleaned"
APPLE_SPAWNED = "apple_spawned"
WASTE_SPAWNED = "waste_spawned"
BOX_OPENED = "box_opened"

EVENT_PAYOFF = {APPLE_EATEN: APPLE_REWARD, BEAM_FIRED: BEAM_COST, AGENT_FINED: FINE_PENALTY}


def rewards_from_events(events: list[Event], n_agents: int) -> np.ndarray:
    """Per-agent reward implied by an event list (the ledger invariant)."""
    r = np.zeros(n_agents)
    for ev in events:
        pay = EVENT_PAYOFF.get(ev.kind)
        if pay is not None:
            r[ev.agent] += pay
    return r


@dataclass(eq=False)
class GridState:
    """Full environment state.  Mutated in place by :func:`step`."""

    width: int
    height: int
    cells: np.ndarray                 # (height, width) int8 CellKind codes
    agents: list[AgentPose]
    tick: int
    rng: np.random.Generator
    prev_actions: np.ndarray          # (N,) int, -1 before the first step
    prev_messages: np.ndarray         # (N,) int, -1 before the first step / comm off
    # spawn fields, populated by the environment layer
    apple_field: np.ndarray | None = None   # bool mask of apple-capable cells
    river_capacity: int = 0
    box_open: bool = False
    trapped_agent: int | None = None

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def occupied(self) -> set[tuple[int, int]]:
        return {a.position for a in self.agents}

    def clone(self) -> "GridState":
        bg = np.random.PCG64()
        bg.state = self.rng.bit_generator.state
        return replace(
            self,
            cells=self.cells.copy(),
            agents=[replace(a) for a in self.agents],
            rng=np.random.Generator(bg),
            prev_actions=self.prev_actions.copy(),
            prev_messages=self.prev_messages.copy(),
            apple_field=None if self.apple_field is None else self.apple_field.copy(),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridState):
            return NotImplemented
        same_field = (
            (self.apple_field is None and other.apple_field is None)
            or (self.apple_field is not None and other.apple_field is not None
                and np.array_equal(self.apple_field, other.apple_field))
        )
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.cells, other.cells)
            and self.agents == other.agents
            and self.tick == other.tick
            and self.rng.bit_generator.state == other.rng.bit_generator.state
            and np.array_equal(self.prev_actions, other.prev_actions)
            and np.array_equal(self.prev_messages, other.prev_messages)
            and same_field
            and self.river_capacity == other.river_capacity
            and self.box_open == other.box_open
            and self.trapped_agent == other.trapped_agent
        )


@dataclass(frozen=True)
class Observation:
    """One agent's egocentric view.

    ``window`` is a V x V array of CellKind codes, rotated so the agent
    faces "up" and anchored at the bottom-center cell; cells beyond the
    grid boundary read as walls.  ``visible_agents`` lists every agent
    (including self at the anchor) whose position falls inside the window,
    as ``(agent_id, (win_row, win_col))``.
    """

    window: np.ndarray
    visible_agents: tuple[tuple[int, tuple[int, int]], ...]
    prev_actions: np.ndarray
    prev_messages: np.ndarray


def parse_layout(text: str) -> tuple[np.ndarray, dict[int, tuple[int, int]]]:
    """Parse an ASCII map into a cell array and agent start positions."""
    rows = [line for line in text.strip("\n").splitlines()]
    if not rows:
        raise ConfigError("empty map layout")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ConfigError("map layout is not rectangular")
    cells = np.zeros((len(rows), width), dtype=np.int8)
    starts: dict[int, tuple[int, int]] = {}
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch.isdigit():
                aid = int(ch)
                if aid in starts:
                    raise ConfigError(f"duplicate agent id {aid} in layout")
                starts[aid] = (r, c)
                cells[r, c] = CellKind.EMPTY
            elif ch in CHAR_TO_CELL:
                cells[r, c] = CHAR_TO_CELL[ch]
            else:
                raise ConfigError(f"unknown map character {ch!r} at ({r},{c})")
    if starts and sorted(starts) != list(range(len(starts))):
        raise ConfigError("agent ids in layout must be 0..N-1")
    return cells, starts


def render_ascii(state: GridState) -> str:
    """Inverse of parse_layout, with agents drawn as their ids."""
    chars = [[CELL_TO_CHAR[CellKind(k)] for k in row] for row in state.cells]
    for a in state.agents:
        chars[a.row][a.col] = str(a.id % 10)
    return "\n".join("".join(row) for row in chars)


def make_state(cells: np.ndarray, starts: dict[int, tuple[int, int]], seed: int) -> GridState:
    agents = [AgentPose(i, r, c) for i, (r, c) in sorted(starts.items())]
    n = len(agents)
    return GridState(
        width=cells.shape[1],
        height=cells.shape[0],
        cells=cells.copy(),
        agents=agents,
        tick=0,
        rng=np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed))),
        prev_actions=np.full(n, -1, dtype=np.int64),
        prev_messages=np.full(n, -1, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# egocentric observation


def _window_to_world(pose: AgentPose, d_fwd, d_right):
    """Map (forward, right) offsets in the agent frame to world (row, col)."""
    r, c = pose.row, pose.col
    o = pose.orientation
    if o == Orientation.N:
        return r - d_fwd, c + d_right
    if o == Orientation.E:
        return r + d_right, c + d_fwd
    if o == Orientation.S:
        return r + d_fwd, c - d_right
    return r - d_right, c - d_fwd


def _world_to_frame(pose: AgentPose, row: int, col: int) -> tuple[int, int]:
    dr, dc = row - pose.row, col - pose.col
    o = pose.orientation
    if o == Orientation.N:
        return -dr, dc
    if o == Orientation.E:
        return dc, dr
    if o == Orientation.S:
        return dr, -dc
    return -dc, -dr


_FRAME_GRIDS: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _frame_offsets(view: int) -> tuple[np.ndarray, np.ndarray]:
    grids = _FRAME_GRIDS.get(view)
    if grids is None:
        wr, wc = np.meshgrid(np.arange(view), np.arange(view), indexing="ij")
        grids = ((view - 1) - wr, wc - view // 2)
        _FRAME_GRIDS[view] = grids
    return grids


def observe(state: GridState, agent_id: int, view: int) -> Observation:
    """Egocentric V x V observation for one agent.  Pure in (state, agent_id)."""
    if agent_id >= state.n_agents:
        raise ContractError(f"agent_id {agent_id} out of range")
    pose = state.agents[agent_id]
    anchor_col = view // 2
    d_fwd, d_right = _frame_offsets(view)
    rows, cols = _window_to_world(pose, d_fwd, d_right)
    inside = (rows >= 0) & (rows < state.height) & (cols >= 0) & (cols < state.width)
    window = np.full((view, view), CellKind.WALL, dtype=np.int8)
    window[inside] = state.cells[rows[inside], cols[inside]]
    visible = []
    for other in state.agents:
        f, s = _world_to_frame(pose, other.row, other.col)
        if 0 <= f < view and -anchor_col <= s <= view - 1 - anchor_col:
            visible.append((other.id, (view - 1 - f, anchor_col + s)))
    return Observation(
        window=window,
        visible_agents=tuple(visible),
        prev_actions=state.prev_actions.copy(),
        prev_messages=state.prev_messages.copy(),
    )


def is_visible(state: GridState, observer: int, target: int, view: int) -> bool:
    """True iff ``target`` stands inside ``observer``'s egocentric window."""
    if observer >= state.n_agents or target >= state.n_agents:
        raise ContractError("agent index out of range")
    pose = state.agents[observer]
    tgt = state.agents[target]
    f, s = _world_to_frame(pose, tgt.row, tgt.col)
    half = view // 2
    return 0 <= f < view and -half <= s <= view - 1 - half


# ---------------------------------------------------------------------------
# stepping


@dataclass
class EnvHooks:
    """Environment-specific behavior injected into the generic step.

    ``extra_actions`` maps action codes >= N_BASE_ACTIONS to handlers
    ``handler(state, agent_id, events)``.  ``spawn`` runs once per step
    after all actions resolve.  ``keep_apples`` makes apples inexhaustible
    (consumed every step an agent stands on one, cell left intact).
    """

    n_actions: int = N_BASE_ACTIONS
    extra_actions: dict = field(default_factory=dict)
    spawn: object = None
    keep_apples: bool = False


def beam_path(state: GridState, pose: AgentPose, length: int = BEAM_LENGTH) -> list[tuple[int, int]]:
    """Cells a beam traverses: a straight ray, stopped by walls and edges."""
    dr, dc = ORIENT_DELTAS[pose.orientation]
    path = []
    r, c = pose.row, pose.col
    for _ in range(length):
        r, c = r + dr, c + dc
        if not (0 <= r < state.height and 0 <= c < state.width):
            break
        if state.cells[r, c] in IMPASSABLE:
            break
        path.append((r, c))
    return path


def step(state: GridState, joint_action, hooks: EnvHooks) -> tuple[GridState, np.ndarray, list[Event]]:
    """Advance the state by one tick.

    Resolution order: rotations, movement (random priority), apple
    consumption, beams and extra actions, spawn hook.  Returns the mutated
    state, the per-agent reward vector and the event log.
    """
    n = state.n_agents
    joint_action = np.asarray(joint_action)
    if joint_action.shape != (n,):
        raise ContractError(f"joint_action must have length {n}")
    if np.any(joint_action < 0) or np.any(joint_action >= hooks.n_actions):
        raise ContractError("action code out of range")

    rewards = np.zeros(n)
    events: list[Event] = []

    for agent, act in zip(state.agents, joint_action):
        if act == ROTATE_CW:
            agent.orientation = Orientation((agent.orientation + 1) % 4)
        elif act == ROTATE_CCW:
            agent.orientation = Orientation((agent.orientation - 1) % 4)

    # permutation drawn every step so entropy use is action-independent
    order = state.rng.permutation(n)
    taken = state.occupied()
    for idx in order:
        act = joint_action[idx]
        delta = MOVE_DELTAS.get(int(act))
        if delta is None:
            continue
        agent = state.agents[idx]
        nr, nc = agent.row + delta[0], agent.col + delta[1]
        if not (0 <= nr < state.height and 0 <= nc < state.width):
            continue
        if state.cells[nr, nc] in IMPASSABLE or (nr, nc) in taken:
            continue
        taken.discard(agent.position)
        taken.add((nr, nc))
        agent.row, agent.col = nr, nc

    for agent in state.agents:
        if state.cells[agent.row, agent.col] == CellKind.APPLE:
            rewards[agent.id] += APPLE_REWARD
            events.append(Event(APPLE_EATEN, agent=agent.id))
            if not hooks.keep_apples:
                state.cells[agent.row, agent.col] = CellKind.EMPTY

    positions = {a.position: a.id for a in state.agents}
    for agent, act in zip(state.agents, joint_action):
        if act == FIRE_FINE:
            rewards[agent.id] += BEAM_COST
            events.append(Event(BEAM_FIRED, agent=agent.id))
            for cell in beam_path(state, agent):
                hit = positions.get(cell)
                if hit is not None:
                    rewards[hit] += FINE_PENALTY
                    events.append(Event(AGENT_FINED, agent=hit))
        elif act >= N_BASE_ACTIONS:
            hooks.extra_actions[int(act)](state, agent.id, events)

    if hooks.spawn is not None:
        hooks.spawn(state, events)

    state.prev_actions = joint_action.astype(np.int64).copy()
    state.tick += 1
    return state, rewards, events

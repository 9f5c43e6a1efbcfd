"""Concrete environment dynamics: Cleanup, Harvest and Box Trapped.

Apples pay +1.  The fining beam costs the firer -1 and fines every agent it
hits -50.  Kind-specific rules:

* **Harvest** -- apples respawn on their original sites with a probability
  that grows with the number of apples still alive within L1 distance 2;
  a site with zero apple neighbors never regrows.
* **Cleanup** -- the map's apple sites start empty; waste accumulates in the
  river while below a saturation threshold, and apples spawn with a
  probability that falls linearly to zero as waste approaches that
  threshold.  A cleaning beam (extra action) converts hit waste back to
  river, for free.
* **Box Trapped** -- one agent starts sealed inside box walls.  The free
  agent has an extra open-box action that, when it stands next to the box,
  removes the box walls for good.  Apples are inexhaustible.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .errors import ConfigError
from .grid import (
    APPLE_SPAWNED, BOX_OPENED, WASTE_CLEANED, WASTE_SPAWNED,
    CellKind, EnvHooks, Event, GridState, Observation,
)

CLEANUP = "cleanup"
HARVEST = "harvest"
BOX_TRAPPED = "boxtrapped"

FIRE_CLEAN = grid.N_BASE_ACTIONS   # cleanup only
OPEN_BOX = grid.N_BASE_ACTIONS     # boxtrapped only

DEFAULT_HARVEST_RESPAWN = (0.0, 0.005, 0.02, 0.05, 0.05, 0.1)

HARVEST_MAP = """\
##################
#....A......A....#
#...AAA....AAA...#
#....A......A....#
#.0..........1...#
#........A.......#
#...2...AAA...3..#
#........A.......#
#....A......A.4..#
#...AAA....AAA...#
#....A......A....#
##################
"""

CLEANUP_MAP = """\
##################
#~~~..........AA.#
#~~~.0........AA.#
#~~~..........AA.#
#~~~.1........AA.#
#~~~..........AA.#
#~~~.2........AA.#
#~~~..........AA.#
#~~~.3........AA.#
#~~~..........AA.#
#~~~.4........AA.#
##################
"""

BOX_TRAPPED_MAP = """\
##########
#A.......#
#.BBB....#
#.B1B..0.#
#.BBB....#
#......A.#
#A.......#
##########
"""

DEFAULT_MAPS = {HARVEST: HARVEST_MAP, CLEANUP: CLEANUP_MAP, BOX_TRAPPED: BOX_TRAPPED_MAP}
DEFAULT_VIEW = {HARVEST: 11, CLEANUP: 11, BOX_TRAPPED: 7}


@dataclass(frozen=True)
class EnvConfig:
    kind: str
    layout: str | None = None          # ASCII map; defaults per kind
    episode_length: int = 1000
    view_size: int | None = None       # defaults per kind
    harvest_respawn: tuple[float, ...] = DEFAULT_HARVEST_RESPAWN
    cleanup_waste_threshold: float = 0.4
    cleanup_waste_spawn_prob: float = 0.5
    cleanup_apple_spawn_prob: float = 0.05
    cleanup_initial_waste: float = 1.0


def flood_fill(cells: np.ndarray, start: tuple[int, int]) -> set[tuple[int, int]]:
    """Cells reachable from ``start`` through passable terrain (4-adjacency)."""
    h, w = cells.shape
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nr < h and 0 <= nc < w and (nr, nc) not in seen \
                    and cells[nr, nc] not in grid.IMPASSABLE:
                seen.add((nr, nc))
                queue.append((nr, nc))
    return seen


def _apple_neighbor_counts(cells: np.ndarray, radius: int = 2) -> np.ndarray:
    """Number of apples within L1 distance ``radius`` of every cell."""
    apple = (cells == CellKind.APPLE).astype(np.int64)
    counts = np.zeros_like(apple)
    h, w = cells.shape
    for dr in range(-radius, radius + 1):
        span = radius - abs(dr)
        for dc in range(-span, span + 1):
            if dr == 0 and dc == 0:
                continue
            src_r = slice(max(0, dr), min(h, h + dr))
            dst_r = slice(max(0, -dr), min(h, h - dr))
            src_c = slice(max(0, dc), min(w, w + dc))
            dst_c = slice(max(0, -dc), min(w, w - dc))
            counts[dst_r, dst_c] += apple[src_r, src_c]
    return counts


class Env:
    """An environment kind bound to its config, exposing reset/step/observe."""

    def __init__(self, config: EnvConfig):
        if config.kind not in DEFAULT_MAPS:
            raise ConfigError(f"unknown environment kind {config.kind!r}")
        self.config = config
        self.kind = config.kind
        layout = config.layout if config.layout is not None else DEFAULT_MAPS[config.kind]
        self._cells, self._starts = grid.parse_layout(layout)
        self.n_agents = len(self._starts)
        self.height, self.width = self._cells.shape
        self.view = config.view_size if config.view_size is not None else DEFAULT_VIEW[config.kind]
        self._validate()
        self.action_names = list(grid.BASE_ACTION_NAMES)
        extra = {}
        if self.kind == CLEANUP:
            self.action_names.append("clean_beam")
            extra[FIRE_CLEAN] = self._do_clean
        elif self.kind == BOX_TRAPPED:
            self.action_names.append("open_box")
            extra[OPEN_BOX] = self._do_open_box
        spawn = {HARVEST: self._harvest_spawn, CLEANUP: self._cleanup_spawn,
                 BOX_TRAPPED: None}[self.kind]
        self.hooks = EnvHooks(
            n_actions=len(self.action_names),
            extra_actions=extra,
            spawn=spawn,
            keep_apples=self.kind == BOX_TRAPPED,
        )

    def _validate(self):
        cfg = self.config
        if self.n_agents < 1:
            raise ConfigError("map defines no agents")
        if self.kind == BOX_TRAPPED and self.n_agents < 2:
            raise ConfigError("boxtrapped needs at least 2 agents")
        if cfg.episode_length < 1:
            raise ConfigError("episode_length must be >= 1")
        if self.view < 1 or self.view % 2 == 0:
            raise ConfigError("view_size must be a positive odd number")
        if self.view > self.width or self.view > self.height:
            raise ConfigError(
                f"observation window {self.view} exceeds grid {self.width}x{self.height}")
        p = cfg.harvest_respawn
        if not p or p[0] != 0.0 or any(b < a for a, b in zip(p, p[1:])) \
                or any(not 0.0 <= x <= 1.0 for x in p):
            raise ConfigError("harvest_respawn must be nondecreasing in [0,1] with p[0]=0")
        if not 0.0 < cfg.cleanup_waste_threshold <= 1.0:
            raise ConfigError("cleanup_waste_threshold must be in (0,1]")
        if not 0.0 <= cfg.cleanup_initial_waste <= 1.0:
            raise ConfigError("cleanup_initial_waste must be in [0,1]")

    @property
    def n_actions(self) -> int:
        return self.hooks.n_actions

    # -- lifecycle ----------------------------------------------------------

    def reset(self, seed: int) -> GridState:
        """Initial state for this config; bit-identical for equal (config, seed)."""
        state = grid.make_state(self._cells, self._starts, seed)
        if self.kind == HARVEST:
            state.apple_field = state.cells == CellKind.APPLE
        elif self.kind == CLEANUP:
            state.apple_field = state.cells == CellKind.APPLE
            state.cells[state.apple_field] = CellKind.EMPTY
            river = np.argwhere(state.cells == CellKind.RIVER)
            state.river_capacity = len(river)
            if state.river_capacity == 0:
                raise ConfigError("cleanup map has no river cells")
            k = round(self.config.cleanup_initial_waste * state.river_capacity)
            picks = state.rng.permutation(state.river_capacity)[:k]
            for r, c in river[picks]:
                state.cells[r, c] = CellKind.WASTE
        elif self.kind == BOX_TRAPPED:
            state.apple_field = state.cells == CellKind.APPLE
            trapped = [
                a.id for a in state.agents
                if not any(state.cells[cell] == CellKind.APPLE
                           for cell in flood_fill(state.cells, a.position))
            ]
            if len(trapped) != 1:
                raise ConfigError("boxtrapped map must trap exactly one agent")
            state.trapped_agent = trapped[0]
        return state

    def step(self, state: GridState, joint_action, messages=None
             ) -> tuple[GridState, np.ndarray, list[Event]]:
        state, rewards, events = grid.step(state, joint_action, self.hooks)
        n = state.n_agents
        if messages is not None:
            state.prev_messages = np.asarray(messages, dtype=np.int64).copy()
        else:
            state.prev_messages = np.full(n, -1, dtype=np.int64)
        return state, rewards, events

    def observe(self, state: GridState, agent_id: int) -> Observation:
        return grid.observe(state, agent_id, self.view)

    def is_visible(self, state: GridState, observer: int, target: int) -> bool:
        return grid.is_visible(state, observer, target, self.view)

    def done(self, state: GridState) -> bool:
        return state.tick >= self.config.episode_length

    # -- kind-specific dynamics ----------------------------------------------

    def _harvest_spawn(self, state: GridState, events: list[Event]):
        counts = _apple_neighbor_counts(state.cells)
        table = np.asarray(self.config.harvest_respawn)
        occupied = state.occupied()
        cand = np.argwhere(state.apple_field & (state.cells == CellKind.EMPTY))
        for r, c in cand:
            if (r, c) in occupied:
                continue
            n = min(counts[r, c], len(table) - 1)
            p = table[n]
            # p(0) = 0 exactly: no draw consumed, a bare patch never regrows
            if p > 0.0 and state.rng.random() < p:
                state.cells[r, c] = CellKind.APPLE
                events.append(Event(APPLE_SPAWNED, cell=(int(r), int(c))))

    def _waste_fraction(self, state: GridState) -> float:
        return np.count_nonzero(state.cells == CellKind.WASTE) / state.river_capacity

    def _cleanup_spawn(self, state: GridState, events: list[Event]):
        cfg = self.config
        if self._waste_fraction(state) < cfg.cleanup_waste_threshold \
                and state.rng.random() < cfg.cleanup_waste_spawn_prob:
            clean = np.argwhere(state.cells == CellKind.RIVER)
            if len(clean):
                r, c = clean[state.rng.integers(len(clean))]
                state.cells[r, c] = CellKind.WASTE
                events.append(Event(WASTE_SPAWNED, cell=(int(r), int(c))))
        frac = self._waste_fraction(state)
        p = cfg.cleanup_apple_spawn_prob * max(0.0, 1.0 - frac / cfg.cleanup_waste_threshold)
        if p <= 0.0:
            return
        occupied = state.occupied()
        cand = np.argwhere(state.apple_field & (state.cells == CellKind.EMPTY))
        for r, c in cand:
            if (r, c) not in occupied and state.rng.random() < p:
                state.cells[r, c] = CellKind.APPLE
                events.append(Event(APPLE_SPAWNED, cell=(int(r), int(c))))

    def _do_clean(self, state: GridState, agent_id: int, events: list[Event]):
        for cell in grid.beam_path(state, state.agents[agent_id]):
            if state.cells[cell] == CellKind.WASTE:
                state.cells[cell] = CellKind.RIVER
                events.append(Event(WASTE_CLEANED, agent=agent_id, cell=cell))

    def _do_open_box(self, state: GridState, agent_id: int, events: list[Event]):
        if state.box_open or agent_id == state.trapped_agent:
            return
        pose = state.agents[agent_id]
        adjacent = any(
            0 <= pose.row + dr < state.height and 0 <= pose.col + dc < state.width
            and state.cells[pose.row + dr, pose.col + dc] == CellKind.BOXWALL
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1))
        )
        if not adjacent:
            return
        state.cells[state.cells == CellKind.BOXWALL] = CellKind.EMPTY
        state.box_open = True
        events.append(Event(BOX_OPENED, agent=agent_id))

"""Maze task generation and the discrete simulation state machine."""

import json
from dataclasses import dataclass, field, asdict, replace
from enum import IntEnum
from collections import deque
from pathlib import Path
from typing import Optional

import numpy as np

from .. import rng

FREE, WALL = 0, 1
NUM_TEXTURES = 8

# Default reach rewards per maze size, from the task configuration table.
REACH_REWARDS = {15: 0.57, 25: 1.24, 35: 2.06}


class Action(IntEnum):
    FORWARD = 0
    BACKWARD = 1
    STOP = 2
    TURN_LEFT = 3
    TURN_RIGHT = 4


class Heading(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3


# (d_row, d_col) per heading; row 0 is the north edge.
HEADING_DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))
NEIGHBORS_4 = ((-1, 0), (0, 1), (1, 0), (0, -1))

TASK_NAVIGATION = "NAVIGATION"
TASK_SURVIVAL = "SURVIVAL"


class ConfigurationError(ValueError):
    pass


class ProtocolError(ValueError):
    """Illegal action id handed to the simulator."""


class EpisodeDoneError(RuntimeError):
    """step() called on a finished episode."""


@dataclass(frozen=True)
class MazeConfig:
    size: int = 15
    obstacle_density: float = 0.36
    num_pnts: int = 10
    cell_size: float = 2.0
    ceiling_height: float = 3.2
    view_height: float = 1.6
    view_range: float = 12.0
    step_cost: float = 0.0
    reach_reward: Optional[float] = None   # None: resolved from size
    episode_len: int = 2048
    task_type: str = TASK_NAVIGATION

    def __post_init__(self):
        if self.size < 7 or self.size % 2 == 0:
            raise ConfigurationError("size must be an odd integer >= 7")
        if not 0.0 <= self.obstacle_density <= 1.0:
            raise ConfigurationError("obstacle_density must be in [0, 1]")
        if self.view_range <= self.cell_size:
            raise ConfigurationError("view_range must exceed cell_size")
        if self.task_type not in (TASK_NAVIGATION, TASK_SURVIVAL):
            raise ConfigurationError(f"unknown task_type {self.task_type!r}")

    def resolved_reach_reward(self) -> float:
        if self.reach_reward is not None:
            return self.reach_reward
        if self.size in REACH_REWARDS:
            return REACH_REWARDS[self.size]
        raise ConfigurationError(
            f"no default reach_reward for size {self.size}; set one explicitly")


@dataclass(frozen=True)
class PNT:
    cell: tuple[int, int]
    color_id: int
    hidden_reward: float = 0.0


@dataclass
class MazeTask:
    config: MazeConfig
    seed: int
    grid: np.ndarray                 # (size, size) uint8, FREE/WALL
    wall_textures: np.ndarray        # (size, size) int16, -1 on free cells
    pnts: list[PNT]
    commands: np.ndarray             # (episode_len,) uint8 color ids
    agent_start: tuple[int, int]
    start_heading: Heading
    actual_density: float
    _vis_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def pnt_by_cell(self) -> dict[tuple[int, int], PNT]:
        return {p.cell: p for p in self.pnts}

    def pnt_by_color(self, color_id: int) -> PNT:
        for p in self.pnts:
            if p.color_id == color_id:
                return p
        raise KeyError(color_id)

    def manifest(self) -> dict:
        """Canonical serialized form: the task regenerates from this."""
        return {"config": asdict(self.config), "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.manifest(), sort_keys=True)


def task_from_manifest(manifest: dict) -> "MazeTask":
    cfg = MazeConfig(**manifest["config"])
    return generate_task(cfg, manifest["seed"])


@dataclass(frozen=True)
class SimState:
    agent_cell: tuple[int, int]
    heading: Heading
    step_index: int = 0
    command_index: int = 0
    accumulated_reward: float = 0.0
    done: bool = False
    on_pnt: Optional[tuple[int, int]] = None   # survival re-arm tracking


def initial_state(task: MazeTask) -> SimState:
    return SimState(agent_cell=task.agent_start, heading=task.start_heading,
                    on_pnt=task.agent_start if task.agent_start in task.pnt_by_cell
                    else None)


def _carve_perfect_maze(size: int, g: np.random.Generator) -> np.ndarray:
    """Depth-first spanning tree over the odd-coordinate room lattice."""
    grid = np.full((size, size), WALL, dtype=np.uint8)
    rooms = [(r, c) for r in range(1, size, 2) for c in range(1, size, 2)]
    start = rooms[int(g.integers(len(rooms)))]
    grid[start] = FREE
    stack = [start]
    visited = {start}
    while stack:
        r, c = stack[-1]
        options = []
        for dr, dc in NEIGHBORS_4:
            nr, nc = r + 2 * dr, c + 2 * dc
            if 1 <= nr < size - 1 and 1 <= nc < size - 1 and (nr, nc) not in visited:
                options.append((nr, nc, r + dr, c + dc))
        if not options:
            stack.pop()
            continue
        nr, nc, wr, wc = options[int(g.integers(len(options)))]
        grid[wr, wc] = FREE
        grid[nr, nc] = FREE
        visited.add((nr, nc))
        stack.append((nr, nc))
    return grid


def _open_walls(grid: np.ndarray, density: float, g: np.random.Generator) -> float:
    """Convert interior WALL cells adjacent to FREE space into FREE cells
    until the interior wall fraction reaches `density` (within one cell).
    Only adds passages, so connectivity is preserved.  Returns the
    achieved density."""
    size = grid.shape[0]
    interior = (size - 2) ** 2
    target_walls = int(round(density * interior))

    def adjacent_free(r, c):
        return any(grid[r + dr, c + dc] == FREE for dr, dc in NEIGHBORS_4)

    candidates = [(r, c) for r in range(1, size - 1) for c in range(1, size - 1)
                  if grid[r, c] == WALL and adjacent_free(r, c)]
    cand_set = set(candidates)
    walls = int((grid[1:-1, 1:-1] == WALL).sum())
    while walls > target_walls and candidates:
        i = int(g.integers(len(candidates)))
        r, c = candidates[i]
        candidates[i] = candidates[-1]
        candidates.pop()
        cand_set.discard((r, c))
        grid[r, c] = FREE
        walls -= 1
        for dr, dc in NEIGHBORS_4:
            nr, nc = r + dr, c + dc
            if (1 <= nr < size - 1 and 1 <= nc < size - 1
                    and grid[nr, nc] == WALL and (nr, nc) not in cand_set):
                candidates.append((nr, nc))
                cand_set.add((nr, nc))
    return walls / interior


def generate_task(config: MazeConfig, seed: int) -> MazeTask:
    """Build one maze task: layout, textures, PNTs, commands, spawn."""
    g_layout = rng.stream(seed, rng.STREAM_MAZE_LAYOUT)
    g_feat = rng.stream(seed, rng.STREAM_MAZE_FEATURES)
    size = config.size

    grid = _carve_perfect_maze(size, g_layout)
    actual = _open_walls(grid, config.obstacle_density, g_layout)

    textures = np.full((size, size), -1, dtype=np.int16)
    wall_mask = grid == WALL
    textures[wall_mask] = g_feat.integers(0, NUM_TEXTURES, int(wall_mask.sum()))

    free_cells = [(int(r), int(c)) for r, c in np.argwhere(grid == FREE)]
    if config.num_pnts > len(free_cells):
        raise ConfigurationError("num_pnts exceeds the number of free cells")
    idx = g_feat.choice(len(free_cells), size=config.num_pnts, replace=False)
    survival = config.task_type == TASK_SURVIVAL
    pnts = []
    for color, i in enumerate(idx):
        reward = float(g_feat.uniform(-1.0, 1.0)) if survival else 0.0
        pnts.append(PNT(cell=free_cells[int(i)], color_id=color,
                        hidden_reward=reward))

    commands = np.empty(config.episode_len, dtype=np.uint8)
    commands[0] = g_feat.integers(config.num_pnts)
    for t in range(1, config.episode_len):
        c = int(g_feat.integers(config.num_pnts - 1))
        commands[t] = c + 1 if c >= commands[t - 1] else c

    agent_start = free_cells[int(g_feat.integers(len(free_cells)))]
    heading = Heading(int(g_feat.integers(4)))

    return MazeTask(config=config, seed=seed, grid=grid, wall_textures=textures,
                    pnts=pnts, commands=commands, agent_start=agent_start,
                    start_heading=heading, actual_density=actual)


def step(task: MazeTask, state: SimState, action: int) -> tuple[SimState, float, list]:
    """Advance the simulation one step executing `action`.

    Returns (new_state, reward, events).  Events are ("reach", color_id)
    in NAVIGATION and ("pnt", color_id, hidden_reward) in SURVIVAL.
    """
    if state.done:
        raise EpisodeDoneError("episode already finished")
    try:
        act = Action(action)
    except ValueError:
        raise ProtocolError(f"invalid action id {action!r}") from None

    cfg = task.config
    r, c = state.agent_cell
    heading = state.heading
    if act in (Action.FORWARD, Action.BACKWARD):
        dr, dc = HEADING_DELTAS[heading]
        if act == Action.BACKWARD:
            dr, dc = -dr, -dc
        nr, nc = r + dr, c + dc
        if task.grid[nr, nc] == FREE:
            r, c = nr, nc
    elif act == Action.TURN_LEFT:
        heading = Heading((heading - 1) % 4)
    elif act == Action.TURN_RIGHT:
        heading = Heading((heading + 1) % 4)

    reward = -cfg.step_cost
    events = []
    command_index = state.command_index
    entered = (r, c) != state.agent_cell
    on_pnt = state.on_pnt
    pnt_here = task.pnt_by_cell.get((r, c))

    if cfg.task_type == TASK_NAVIGATION:
        commanded = int(task.commands[min(command_index, len(task.commands) - 1)])
        if entered and pnt_here is not None and pnt_here.color_id == commanded:
            reward += cfg.resolved_reach_reward()
            command_index += 1
            events.append(("reach", commanded))
    else:
        if pnt_here is not None and (r, c) != on_pnt:
            reward += pnt_here.hidden_reward
            events.append(("pnt", pnt_here.color_id, pnt_here.hidden_reward))
    on_pnt = (r, c) if pnt_here is not None else None

    step_index = state.step_index + 1
    new_state = SimState(
        agent_cell=(r, c), heading=heading, step_index=step_index,
        command_index=command_index,
        accumulated_reward=state.accumulated_reward + reward,
        done=step_index >= cfg.episode_len, on_pnt=on_pnt)
    return new_state, reward, events


def current_command(task: MazeTask, state: SimState) -> int:
    """Color id of the currently commanded PNT."""
    return int(task.commands[min(state.command_index, len(task.commands) - 1)])


def shortest_path(task: MazeTask, from_cell: tuple[int, int],
                  to_cell: tuple[int, int]) -> int:
    """BFS distance in cells over the 4-adjacent FREE graph."""
    if task.grid[from_cell] != FREE or task.grid[to_cell] != FREE:
        raise ValueError("shortest_path endpoints must be FREE cells")
    if from_cell == to_cell:
        return 0
    dist = {from_cell: 0}
    q = deque([from_cell])
    while q:
        r, c = q.popleft()
        d = dist[(r, c)]
        for dr, dc in NEIGHBORS_4:
            nxt = (r + dr, c + dc)
            if task.grid[nxt] == FREE and nxt not in dist:
                if nxt == to_cell:
                    return d + 1
                dist[nxt] = d + 1
                q.append(nxt)
    raise AssertionError("free cells must be connected")  # invariant


def connected_free_cells(task: MazeTask) -> bool:
    """Flood-fill check of the single-component invariant."""
    free = np.argwhere(task.grid == FREE)
    start = (int(free[0][0]), int(free[0][1]))
    seen = {start}
    q = deque([start])
    while q:
        r, c = q.popleft()
        for dr, dc in NEIGHBORS_4:
            nxt = (r + dr, c + dc)
            if task.grid[nxt] == FREE and nxt not in seen:
                seen.add(nxt)
                q.append(nxt)
    return len(seen) == len(free)


def free_graph_cycles(task: MazeTask) -> int:
    """Number of independent cycles of the FREE adjacency graph."""
    cells = np.argwhere(task.grid == FREE)
    vertices = len(cells)
    edges = 0
    for r, c in cells:
        for dr, dc in ((0, 1), (1, 0)):
            if task.grid[r + dr, c + dc] == FREE:
                edges += 1
    components = 1 if connected_free_cells(task) else -1
    return edges - vertices + components

"""Privileged reference agents and the random baseline.

The privileged agent sees the ground-truth map only through line of
sight: the last three visible sets form its short-term memory, and each
observed cell is copied into long-term memory with probability
p_transfer.  It explores toward the nearest frontier until the commanded
target is known, then follows a BFS shortest path over known-free cells.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng
from .maze.core import (Action, Heading, HEADING_DELTAS, NEIGHBORS_4,
                        MazeTask, SimState, current_command)
from .maze.render import (CLASS_FREE, CLASS_WALL, CLASS_PNT_BASE,
                          visible_cells)


@dataclass
class OccupancyMemory:
    p_transfer: float
    stm: deque = field(default_factory=lambda: deque(maxlen=3))
    ltm: dict = field(default_factory=dict)

    def observe(self, visible: frozenset, g: np.random.Generator) -> None:
        """Push one visible set into STM and probabilistically into LTM."""
        self.stm.append(visible)
        if self.p_transfer <= 0.0:
            return
        for cell, cls in sorted(visible):
            if cell in self.ltm:
                continue
            if self.p_transfer >= 1.0 or g.random() < self.p_transfer:
                self.ltm[cell] = cls

    def known_map(self) -> dict:
        """Merged cell -> class view of LTM plus current STM."""
        known = dict(self.ltm)
        for vis in self.stm:
            for cell, cls in vis:
                known[cell] = cls
        return known


def _bfs(known_free: set, start: tuple[int, int]):
    """BFS over known-free cells; returns (dist, parent) dicts."""
    dist = {start: 0}
    parent = {}
    q = deque([start])
    while q:
        r, c = q.popleft()
        for dr, dc in NEIGHBORS_4:
            nxt = (r + dr, c + dc)
            if nxt in known_free and nxt not in dist:
                dist[nxt] = dist[(r, c)] + 1
                parent[nxt] = (r, c)
                q.append(nxt)
    return dist, parent


def _first_step(parent: dict, start, goal) -> tuple[int, int]:
    cell = goal
    while parent[cell] != start:
        cell = parent[cell]
    return cell

def _step_action(cell, heading: Heading, target) -> Action:
    """Single action moving/turning from `cell` toward adjacent `target`."""
    delta = (target[0] - cell[0], target[1] - cell[1])
    want = HEADING_DELTAS.index(delta)
    diff = (want - heading) % 4
    if diff == 0:
        return Action.FORWARD
    if diff == 2:
        return Action.BACKWARD
    return Action.TURN_LEFT if diff == 3 else Action.TURN_RIGHT


class PrivilegedAgent:
    """Exploration-then-exploitation policy over an occupancy memory."""

    def __init__(self, p_transfer: float, seed: int):
        self.memory = OccupancyMemory(p_transfer=p_transfer)
        self._g = rng.stream(seed, rng.STREAM_AGENT)
        self._last_turned = False
        self.mode = "EXPLORE"

    def observe(self, visible: frozenset) -> None:
        self.memory.observe(visible, self._g)

    def act(self, agent_cell: tuple[int, int], heading: Heading,
            commanded_color: int) -> Action:
        known = self.memory.known_map()
        known_free = {cell for cell, cls in known.items() if cls != CLASS_WALL}
        known_free.add(agent_cell)
        dist, parent = _bfs(known_free, agent_cell)

        # Exploit: commanded PNT cell known and reachable through known space.
        target = next((cell for cell, cls in known.items()
                       if cls == CLASS_PNT_BASE + commanded_color), None)
        if target is not None and target in dist and target != agent_cell:
            self.mode = "EXPLOIT"
            self._last_turned = False
            nxt = _first_step(parent, agent_cell, target)
            return _step_action(agent_cell, heading, nxt)

        # Explore: nearest frontier, ties broken by lowest (row, col).
        self.mode = "EXPLORE"
        frontiers = [cell for cell in dist
                     if any((cell[0] + dr, cell[1] + dc) not in known
                            for dr, dc in NEIGHBORS_4)]
        if frontiers:
            goal = min(frontiers, key=lambda cell: (dist[cell], cell))
            self._last_turned = False
            if goal == agent_cell:
                unknown = min((agent_cell[0] + dr, agent_cell[1] + dc)
                              for dr, dc in NEIGHBORS_4
                              if (agent_cell[0] + dr, agent_cell[1] + dc)
                              not in known)
                return _step_action(agent_cell, heading, unknown)
            nxt = _first_step(parent, agent_cell, goal)
            return _step_action(agent_cell, heading, nxt)

        return self._wall_follow(agent_cell, heading, known)

    def _wall_follow(self, cell, heading: Heading, known: dict) -> Action:
        """Left-hand fallback when no frontier and no known target exist."""
        def known_wall(h: Heading) -> bool:
            dr, dc = HEADING_DELTAS[h]
            return known.get((cell[0] + dr, cell[1] + dc)) == CLASS_WALL

        left = Heading((heading - 1) % 4)
        if not self._last_turned and not known_wall(left):
            self._last_turned = True
            return Action.TURN_LEFT
        if not known_wall(heading):
            self._last_turned = False
            return Action.FORWARD
        self._last_turned = True
        return Action.TURN_RIGHT


def random_policy(g: np.random.Generator) -> Action:
    """Uniform draw over the five actions."""
    return Action(int(g.integers(len(Action))))


class RandomAgent:
    def __init__(self, seed: int):
        self._g = rng.stream(seed, rng.STREAM_AGENT)

    def observe(self, visible) -> None:
        pass

    def act(self, agent_cell, heading, commanded_color) -> Action:
        return random_policy(self._g)

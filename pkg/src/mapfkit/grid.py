"""Grid world core: maps, instances, transition semantics, plan validation.

Coordinates are (row, col) with row 0 at the top. Up decreases the row,
Right increases the column. All values here are immutable once built and
safe to share across threads.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

FREE = 0
OBSTACLE = 1

# Action codes are fixed: Up=0, Right=1, Down=2, Left=3, Wait=4.
UP, RIGHT, DOWN, LEFT, WAIT = 0, 1, 2, 3, 4
ACTIONS = (UP, RIGHT, DOWN, LEFT, WAIT)
ACTION_DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1), (0, 0))
ACTION_NAMES = ("Up", "Right", "Down", "Left", "Wait")

UNREACHABLE = -1

_FREE_CHARS = {".", "G"}
_OBSTACLE_CHARS = {"@", "O", "T", "W"}


class MapFormatError(ValueError):
    """Base class for .map parsing failures."""


class MalformedHeader(MapFormatError):
    pass


class DimensionMismatch(MapFormatError):
    pass


class UnknownCellChar(MapFormatError):
    pass


class GoalOnObstacle(ValueError):
    pass


class TooManyAgents(ValueError):
    pass


class NoReachableGoal(RuntimeError):
    pass


class StateInvalid(ValueError):
    pass


class EmptyPath(ValueError):
    pass


class WrongStart(ValueError):
    pass


@dataclass(frozen=True)
class GridMap:
    """2-D occupancy grid. `cells` is a read-only (height, width) uint8 array."""

    width: int
    height: int
    cells: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("map dimensions must be >= 1")
        cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        if cells.shape != (self.height, self.width):
            raise ValueError(f"cells shape {cells.shape} != {(self.height, self.width)}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.cells, other.cells)
        )

    def __hash__(self):
        return hash((self.width, self.height, self.cells.tobytes()))

    def is_free(self, pos) -> bool:
        r, c = pos
        return 0 <= r < self.height and 0 <= c < self.width and self.cells[r, c] == FREE

    def free_cells(self) -> list[tuple[int, int]]:
        rs, cs = np.nonzero(self.cells == FREE)
        return list(zip(rs.tolist(), cs.tolist()))

    @property
    def n_free(self) -> int:
        return int(np.count_nonzero(self.cells == FREE))


@dataclass(frozen=True)
class ProblemInstance:
    map: GridMap
    agents: tuple  # of (start, goal) pairs, each a (row, col) tuple
    seed: int = 0

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def starts(self) -> tuple:
        return tuple(a[0] for a in self.agents)

    @property
    def goals(self) -> tuple:
        return tuple(a[1] for a in self.agents)


@dataclass(frozen=True)
class State:
    positions: tuple  # per-agent (row, col)
    step: int = 0


@dataclass(frozen=True)
class CostField:
    """Shortest 4-connected distances to `goal`; UNREACHABLE (-1) where cut off."""

    goal: tuple
    dist: np.ndarray  # (height, width) int32, read-only

    def __post_init__(self):
        d = np.ascontiguousarray(self.dist, dtype=np.int32)
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)

    def at(self, pos) -> int:
        return int(self.dist[pos[0], pos[1]])


@dataclass(frozen=True)
class Violation:
    step: int
    kind: str  # VertexCollision | EdgeCollision | ObstacleEntry | Teleport
    agents: tuple


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple


def load_map(text: str, name: str = "") -> GridMap:
    """Parse MovingAI .map text. `.`/`G` are free, `@ O T W` are obstacles."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines = lines[:-1]
    if len(lines) < 4:
        raise MalformedHeader("expected 4 header lines")
    if not lines[0].startswith("type"):
        raise MalformedHeader(f"bad type line: {lines[0]!r}")
    try:
        h_label, h_val = lines[1].split()
        w_label, w_val = lines[2].split()
        height, width = int(h_val), int(w_val)
    except ValueError as e:
        raise MalformedHeader(f"bad height/width lines: {lines[1]!r}, {lines[2]!r}") from e
    if h_label != "height" or w_label != "width":
        raise MalformedHeader("expected 'height H' then 'width W'")
    if lines[3] != "map":
        raise MalformedHeader(f"expected 'map' line, got {lines[3]!r}")
    rows = lines[4:]
    if len(rows) != height:
        raise DimensionMismatch(f"header height {height} but {len(rows)} body rows")
    cells = np.empty((height, width), dtype=np.uint8)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise DimensionMismatch(f"row {r} has {len(row)} chars, expected {width}")
        for c, ch in enumerate(row):
            if ch in _FREE_CHARS:
                cells[r, c] = FREE
            elif ch in _OBSTACLE_CHARS:
                cells[r, c] = OBSTACLE
            else:
                raise UnknownCellChar(f"unknown cell char {ch!r} at row {r} col {c}")
    return GridMap(width=width, height=height, cells=cells, name=name)


def save_map(m: GridMap) -> str:
    """Serialize to MovingAI .map text; byte-deterministic, LF newlines."""
    out = [f"type octile", f"height {m.height}", f"width {m.width}", "map"]
    for r in range(m.height):
        out.append("".join("." if m.cells[r, c] == FREE else "@" for c in range(m.width)))
    return "\n".join(out) + "\n"


def bfs_cost_to_goal(m: GridMap, goal) -> CostField:
    """Breadth-first 4-connected distance from every free cell to `goal`."""
    if not m.is_free(goal):
        raise GoalOnObstacle(f"goal {goal} is not a free cell")
    dist = np.full((m.height, m.width), UNREACHABLE, dtype=np.int32)
    gr, gc = goal
    dist[gr, gc] = 0
    q = deque([(gr, gc)])
    cells = m.cells
    while q:
        r, c = q.popleft()
        d = dist[r, c] + 1
        for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < m.height and 0 <= nc < m.width and cells[nr, nc] == FREE and dist[nr, nc] < 0:
                dist[nr, nc] = d
                q.append((nr, nc))
    return CostField(goal=(gr, gc), dist=dist)


def connected_components(m: GridMap) -> np.ndarray:
    """Label free cells by 4-connected component id; obstacles get -1."""
    labels = np.full((m.height, m.width), -1, dtype=np.int32)
    next_label = 0
    for r in range(m.height):
        for c in range(m.width):
            if m.cells[r, c] != FREE or labels[r, c] >= 0:
                continue
            labels[r, c] = next_label
            q = deque([(r, c)])
            while q:
                cr, cc = q.popleft()
                for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1)):
                    nr, nc = cr + dr, cc + dc
                    if (
                        0 <= nr < m.height
                        and 0 <= nc < m.width
                        and m.cells[nr, nc] == FREE
                        and labels[nr, nc] < 0
                    ):
                        labels[nr, nc] = next_label
                        q.append((nr, nc))
            next_label += 1
    return labels


def generate_instance(m: GridMap, n_agents: int, seed: int,
                      max_goal_tries: int = 1000) -> ProblemInstance:
    """Draw starts/goals uniformly without replacement from free cells.

    Goals are resampled (bounded tries per agent) until reachable from the
    paired start. Deterministic for a fixed (map, n_agents, seed).
    """
    free = m.free_cells()
    if n_agents > len(free):
        raise TooManyAgents(f"{n_agents} agents but only {len(free)} free cells")
    rng = np.random.default_rng(seed)
    comp = connected_components(m)

    start_idx = rng.choice(len(free), size=n_agents, replace=False)
    starts = [free[i] for i in start_idx]

    goals: list[tuple[int, int]] = []
    taken: set[tuple[int, int]] = set()
    for start in starts:
        want = comp[start[0], start[1]]
        goal = None
        for _ in range(max_goal_tries):
            cand = free[int(rng.integers(len(free)))]
            if cand in taken or comp[cand[0], cand[1]] != want:
                continue
            goal = cand
            break
        if goal is None:
            raise NoReachableGoal(f"no reachable unused goal for start {start}")
        taken.add(goal)
        goals.append(goal)

    return ProblemInstance(
        map=m, agents=tuple(zip(starts, goals)), seed=seed
    )


def _check_state(state: State, m: GridMap):
    seen = set()
    for pos in state.positions:
        if not m.is_free(pos):
            raise StateInvalid(f"agent on non-free cell {pos}")
        if pos in seen:
            raise StateInvalid(f"duplicate position {pos}")
        seen.add(pos)


def step(state: State, joint, m: GridMap) -> tuple[State, tuple]:
    """Apply a joint action with conflict resolution.

    Resolution: moves into obstacles or off-map become Wait; then vertex
    conflicts, edge swaps, and moves into cells held by now-waiting agents
    all become Wait, iterated to a fixed point. The returned state is always
    collision-free.
    """
    _check_state(state, m)
    n = len(state.positions)
    if len(joint) != n:
        raise StateInvalid(f"joint action has {len(joint)} entries for {n} agents")
    pos = list(state.positions)
    resolved = list(joint)

    # rule 1: obstacle / off-map moves wait
    for i in range(n):
        a = resolved[i]
        if a == WAIT:
            continue
        dr, dc = ACTION_DELTAS[a]
        tgt = (pos[i][0] + dr, pos[i][1] + dc)
        if not m.is_free(tgt):
            resolved[i] = WAIT

    # rules 2-4 to a fixed point
    while True:
        targets = []
        for i in range(n):
            dr, dc = ACTION_DELTAS[resolved[i]]
            targets.append((pos[i][0] + dr, pos[i][1] + dc))
        changed = False

        by_cell: dict[tuple[int, int], list[int]] = {}
        for i, t in enumerate(targets):
            by_cell.setdefault(t, []).append(i)
        for group in by_cell.values():
            if len(group) > 1:
                for i in group:
                    if resolved[i] != WAIT:
                        resolved[i] = WAIT
                        changed = True

        pos_index = {p: i for i, p in enumerate(pos)}
        for i in range(n):
            if resolved[i] == WAIT:
                continue
            j = pos_index.get(targets[i])
            if j is None or j == i:
                continue
            if resolved[j] == WAIT:
                # target cell stays occupied
                resolved[i] = WAIT
                changed = True
            elif targets[j] == pos[i]:
                # swap
                resolved[i] = WAIT
                resolved[j] = WAIT
                changed = True

        if not changed:
            break

    new_pos = []
    for i in range(n):
        dr, dc = ACTION_DELTAS[resolved[i]]
        new_pos.append((pos[i][0] + dr, pos[i][1] + dc))
    return State(positions=tuple(new_pos), step=state.step + 1), tuple(resolved)


def is_success(state: State, instance: ProblemInstance) -> bool:
    return all(p == g for p, g in zip(state.positions, instance.goals))


def validate_plan(instance: ProblemInstance, paths) -> ValidationReport:
    """Check paths for vertex/edge collisions, obstacle entries and teleports.

    Shorter paths are treated as waiting at their final cell for the purpose
    of collision checks.
    """
    m = instance.map
    n = len(paths)
    for i, p in enumerate(paths):
        if len(p) == 0:
            raise EmptyPath(f"agent {i} path is empty")
        if tuple(p[0]) != tuple(instance.starts[i]):
            raise WrongStart(f"agent {i} starts at {p[0]}, expected {instance.starts[i]}")

    horizon = max(len(p) for p in paths)

    def at(i, t):
        p = paths[i]
        return tuple(p[min(t, len(p) - 1)])

    violations = []
    for i in range(n):
        p = paths[i]
        for t, cell in enumerate(p):
            if not m.is_free(cell):
                violations.append(Violation(step=t, kind="ObstacleEntry", agents=(i,)))
        for t in range(1, len(p)):
            dr = p[t][0] - p[t - 1][0]
            dc = p[t][1] - p[t - 1][1]
            if (dr, dc) not in ACTION_DELTAS:
                violations.append(Violation(step=t, kind="Teleport", agents=(i,)))

    for t in range(horizon):
        by_cell: dict[tuple[int, int], list[int]] = {}
        for i in range(n):
            by_cell.setdefault(at(i, t), []).append(i)
        for cell, group in by_cell.items():
            if len(group) > 1:
                violations.append(Violation(step=t, kind="VertexCollision", agents=tuple(group)))
        if t > 0:
            for i in range(n):
                for j in range(i + 1, n):
                    if at(i, t) == at(j, t - 1) and at(j, t) == at(i, t - 1) and at(i, t) != at(i, t - 1):
                        violations.append(Violation(step=t, kind="EdgeCollision", agents=(i, j)))

    return ValidationReport(ok=not violations, violations=tuple(violations))

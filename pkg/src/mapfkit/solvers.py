"""Classical expert for trajectory generation.

The expert is prioritized planning: agents are ordered randomly and each runs
a space-time A* against a reservation table holding the paths already
committed, including permanent parking on reached goals. On failure the
priority order is reshuffled and planning restarts.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .grid import (
    ACTION_DELTAS,
    UP,
    RIGHT,
    DOWN,
    LEFT,
    WAIT,
    CostField,
    GridMap,
    ProblemInstance,
    State,
    bfs_cost_to_goal,
    step,
)


class Unsolved(RuntimeError):
    """All restarts exhausted; skip this instance."""


class UnreachablePosition(ValueError):
    pass


@dataclass(frozen=True)
class Plan:
    paths: tuple  # per-agent tuple of (row, col), ending at the goal
    makespan: int
    sum_of_costs: int


@dataclass
class Trajectory:
    """Executed expert episode: states, resolved actions and observations.

    observations[t][i] is agent i's ObservationBundle at time t; observations
    exist for every t in 0..makespan so consecutive pairs form training
    tuples. Wait-at-target steps are kept.
    """

    instance: ProblemInstance
    states: list  # State, length makespan+1
    actions: list  # per step, tuple of resolved actions
    observations: list  # per step, list of ObservationBundle per agent

    @property
    def makespan(self) -> int:
        return len(self.actions)


class ReservationTable:
    """Space-time occupancy of already-planned agents."""

    def __init__(self):
        self.vertex = set()  # (r, c, t)
        self.edge = set()  # (r_from, c_from, r_to, c_to, t_arrive)
        self.static_from = {}  # (r, c) -> first time the cell is parked forever
        self.last_vertex_time = {}  # (r, c) -> latest finite reservation

    def reserve_path(self, path):
        for t, cell in enumerate(path):
            self.vertex.add((cell[0], cell[1], t))
            prev_t = self.last_vertex_time.get(cell, -1)
            if t > prev_t:
                self.last_vertex_time[cell] = t
            if t > 0:
                p = path[t - 1]
                self.edge.add((p[0], p[1], cell[0], cell[1], t))
        goal = path[-1]
        self.static_from[goal] = len(path) - 1

    def blocked(self, frm, to, t_arrive) -> bool:
        if (to[0], to[1], t_arrive) in self.vertex:
            return True
        park = self.static_from.get(to)
        if park is not None and t_arrive >= park:
            return True
        # swap: someone else traverses to -> frm arriving at the same time
        if (to[0], to[1], frm[0], frm[1], t_arrive) in self.edge:
            return True
        return False

    def can_park(self, cell, t) -> bool:
        if cell in self.static_from and self.static_from[cell] != np.inf:
            return False
        return t > self.last_vertex_time.get(cell, -1)


def space_time_astar(m: GridMap, start, goal, costfield: CostField, table: ReservationTable,
                     t_limit: int, max_expansions: int = 200_000):
    """Single-agent shortest path through time against reservations.

    Returns the position sequence (start at t=0 through arrival) or None.
    Arrival requires that the goal can be held forever afterwards.
    """
    h0 = costfield.at(start)
    if h0 < 0:
        return None
    counter = 0
    open_heap = [(h0, 0, counter, start)]
    g_best = {(start, 0): 0}
    parent = {}
    expansions = 0
    while open_heap:
        f, t, _, pos = heapq.heappop(open_heap)
        g = t
        if g_best.get((pos, t), np.inf) < g:
            continue
        if pos == goal and table.can_park(pos, t):
            path = [pos]
            key = (pos, t)
            while key in parent:
                key = parent[key]
                path.append(key[0])
            path.reverse()
            return path
        expansions += 1
        if expansions > max_expansions or t >= t_limit:
            continue
        for dr, dc in ACTION_DELTAS:
            npos = (pos[0] + dr, pos[1] + dc)
            if not m.is_free(npos):
                continue
            if costfield.at(npos) < 0:
                continue
            nt = t + 1
            if table.blocked(pos, npos, nt):
                continue
            key = (npos, nt)
            if g_best.get(key, np.inf) <= nt:
                continue
            g_best[key] = nt
            parent[key] = (pos, t)
            counter += 1
            heapq.heappush(open_heap, (nt + costfield.at(npos), nt, counter, npos))
    return None


def prioritized_plan(instance: ProblemInstance, seed: int, max_restarts: int = 20) -> Plan:
    """Randomized-priority prioritized planning with restarts.

    Raises Unsolved when every restart fails; callers doing data generation
    should skip such instances.
    """
    m = instance.map
    n = instance.n_agents
    rng = np.random.default_rng(seed)
    costfields = [bfs_cost_to_goal(m, g) for g in instance.goals]
    t_limit = 2 * m.width * m.height + 2 * n + 4

    for _ in range(max_restarts + 1):
        order = rng.permutation(n)
        table = ReservationTable()
        paths: list = [None] * n
        ok = True
        for i in order:
            path = space_time_astar(
                m, instance.starts[i], instance.goals[i], costfields[i], table, t_limit
            )
            if path is None:
                ok = False
                break
            paths[i] = tuple(path)
            table.reserve_path(path)
        if ok:
            makespan = max(len(p) - 1 for p in paths)
            soc = sum(len(p) - 1 for p in paths)
            return Plan(paths=tuple(paths), makespan=makespan, sum_of_costs=soc)
    raise Unsolved(f"no plan after {max_restarts} restarts (seed {seed})")


def greedy_action(costfield: CostField, pos, m: GridMap) -> int:
    """Cost-descending move, ties broken Up, Right, Down, Left; Wait at minima."""
    here = costfield.at(pos)
    if here < 0:
        raise UnreachablePosition(f"{pos} cannot reach {costfield.goal}")
    best_action = WAIT
    best = here
    for a in (UP, RIGHT, DOWN, LEFT):
        dr, dc = ACTION_DELTAS[a]
        npos = (pos[0] + dr, pos[1] + dc)
        if not m.is_free(npos):
            continue
        d = costfield.at(npos)
        if 0 <= d < best:
            best = d
            best_action = a
    return best_action


def _action_between(a, b) -> int:
    delta = (b[0] - a[0], b[1] - a[1])
    return ACTION_DELTAS.index(delta)


def run_expert_episode(instance: ProblemInstance, seed: int, max_restarts: int = 20) -> Trajectory:
    """Execute the expert plan through the environment, recording observations.

    Agents that reach their goal early contribute wait-at-target samples until
    the episode's makespan.
    """
    from .tokenizer import build_observation  # local import to avoid a cycle

    plan = prioritized_plan(instance, seed, max_restarts=max_restarts)
    m = instance.map
    n = instance.n_agents
    costfields = {i: bfs_cost_to_goal(m, g) for i, g in enumerate(instance.goals)}

    padded = []
    for i, p in enumerate(plan.paths):
        pad = p + (p[-1],) * (plan.makespan + 1 - len(p))
        padded.append(pad)

    state = State(positions=tuple(p[0] for p in padded), step=0)
    histories = {i: [] for i in range(n)}
    states = [state]
    actions = []
    observations = []

    for t in range(plan.makespan):
        obs_t = [
            build_observation(state, i, instance, costfields, histories=histories)
            for i in range(n)
        ]
        observations.append(obs_t)
        joint = tuple(_action_between(padded[i][t], padded[i][t + 1]) for i in range(n))
        state, resolved = step(state, joint, m)
        for i in range(n):
            histories[i].append(resolved[i])
        states.append(state)
        actions.append(resolved)

    observations.append(
        [build_observation(state, i, instance, costfields, histories=histories) for i in range(n)]
    )
    return Trajectory(instance=instance, states=states, actions=actions, observations=observations)

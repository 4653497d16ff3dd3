"""Egocentric 256-token observations and the training-sample layout.

Token layout (0-based positions):
  0..120    11x11 cost map around the ego agent, row-major offsets -5..+5
  121..250  thirteen 10-token agent segments, slot 0 = ego
  251..255  permanent padding

Each agent segment is [rel row, rel col, goal rel row, goal rel col,
h1..h5 (last five resolved actions, oldest first, pad-filled), est].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FREE, GridMap, ProblemInstance, State
from .solvers import greedy_action

# --- vocabulary -------------------------------------------------------------
# 60 dense ids. MASK shares the PAD id so the table stays at 60 entries.
COST_DELTA_MIN, COST_DELTA_MAX = -10, 10
COORD_MIN, COORD_MAX = -15, 15

COST_DELTA_BASE = 0  # ids 0..20
OBSTACLE_ID = 21
UNREACHABLE_ID = 22
COORD_BASE = 23  # ids 23..53
ACTION_BASE = 54  # ids 54..58
PAD_ID = 59
MASK_ID = PAD_ID
VOCAB_SIZE = 60

SEQ_LEN = 256
FOV_RADIUS = 5
FOV = 2 * FOV_RADIUS + 1
N_COST_TOKENS = FOV * FOV  # 121
AGENT_BASE = N_COST_TOKENS  # 121
N_SLOTS = 13
SLOT_LEN = 10
TAIL_PAD_BASE = AGENT_BASE + N_SLOTS * SLOT_LEN  # 251

HIST_LEN = 5
HIST_OFFSET = 4  # within a segment
EST_OFFSET = 9

EMPTY_SLOT = -128  # sentinel in slot coordinate arrays / dataset sidecar


class EgoNotInState(ValueError):
    pass


def cost_delta_id(delta: int) -> int:
    d = min(max(delta, COST_DELTA_MIN), COST_DELTA_MAX)
    return COST_DELTA_BASE + d - COST_DELTA_MIN


def coord_id(v: int) -> int:
    v = min(max(v, COORD_MIN), COORD_MAX)
    return COORD_BASE + v - COORD_MIN


def quantize_coord(v: int) -> int:
    """Clamp to [-15, +15] and map to the coordinate vocab id."""
    return coord_id(v)


def action_id(a: int) -> int:
    return ACTION_BASE + a


def decode_coord(token: int):
    if COORD_BASE <= token < COORD_BASE + (COORD_MAX - COORD_MIN + 1):
        return token - COORD_BASE + COORD_MIN
    return None


def decode_action(token: int):
    if ACTION_BASE <= token < ACTION_BASE + 5:
        return token - ACTION_BASE
    return None


def slot_positions(slot: int) -> range:
    base = AGENT_BASE + slot * SLOT_LEN
    return range(base, base + SLOT_LEN)


def est_position(slot: int) -> int:
    return AGENT_BASE + slot * SLOT_LEN + EST_OFFSET


def hist_positions(slot: int) -> range:
    base = AGENT_BASE + slot * SLOT_LEN + HIST_OFFSET
    return range(base, base + HIST_LEN)


@dataclass(frozen=True)
class ObservationBundle:
    """256 observation tokens plus the raw integers behind their encoding.

    slot_s / slot_g are (13, 2) arrays of (row, col) offsets relative to the
    ego agent (goal offsets clamped to the coordinate range); EMPTY_SLOT marks
    unoccupied slots. slot_agents maps slot index to the global agent id.
    """

    tokens: np.ndarray  # (256,) uint8
    slot_s: np.ndarray  # (13, 2) int16
    slot_g: np.ndarray  # (13, 2) int16
    slot_agents: tuple  # 13 entries of agent id or None
    ego: int
    step: int

    def __post_init__(self):
        for name in ("tokens", "slot_s", "slot_g"):
            arr = getattr(self, name)
            arr.setflags(write=False)


@dataclass(frozen=True)
class TrainingSample:
    """One (o_t, o_{t+1}, a_t) supervision tuple.

    m_mask covers every pad position of the target; a_mask the history
    positions of occupied target slots (minus pad entries, which stay masked);
    g_mask the estimated-action positions of occupied target slots.
    """

    input: ObservationBundle
    target_tokens: np.ndarray  # (256,) uint8
    target_action: int
    a_mask: np.ndarray  # (256,) bool
    g_mask: np.ndarray  # (256,) bool

    @property
    def m_mask(self) -> np.ndarray:
        return self.target_tokens == PAD_ID


def build_observation(state: State, ego: int, instance: ProblemInstance, costfields,
                      est_override=None, histories=None) -> ObservationBundle:
    """Assemble the 256-token egocentric observation for one agent.

    costfields maps agent id to its CostField. est_override, when given,
    replaces the greedy estimated action for specific agent ids. histories
    maps agent id to its resolved-action list (missing or short histories are
    pad-filled on the left).
    """
    n = len(state.positions)
    if not (0 <= ego < n):
        raise EgoNotInState(f"agent {ego} not in state of {n} agents")
    m = instance.map
    er, ec = state.positions[ego]
    ego_field = costfields[ego]
    d_ego = ego_field.at((er, ec))

    # cost-map window
    win_occ = np.ones((FOV, FOV), dtype=np.uint8)  # off-map counts as obstacle
    win_dist = np.full((FOV, FOV), -1, dtype=np.int32)
    r0, c0 = er - FOV_RADIUS, ec - FOV_RADIUS
    rs, re = max(r0, 0), min(er + FOV_RADIUS + 1, m.height)
    cs, ce = max(c0, 0), min(ec + FOV_RADIUS + 1, m.width)
    if rs < re and cs < ce:
        win_occ[rs - r0:re - r0, cs - c0:ce - c0] = m.cells[rs:re, cs:ce]
        win_dist[rs - r0:re - r0, cs - c0:ce - c0] = ego_field.dist[rs:re, cs:ce]

    delta = np.clip(win_dist - d_ego, COST_DELTA_MIN, COST_DELTA_MAX)
    cost_tokens = np.where(
        win_occ != FREE,
        OBSTACLE_ID,
        np.where(win_dist < 0, UNREACHABLE_ID, delta - COST_DELTA_MIN + COST_DELTA_BASE),
    ).astype(np.uint8)

    tokens = np.full(SEQ_LEN, PAD_ID, dtype=np.uint8)
    tokens[:N_COST_TOKENS] = cost_tokens.reshape(-1)

    # agent slots: ego first, then FoV neighbours by (Chebyshev distance, id)
    others = []
    for j in range(n):
        if j == ego:
            continue
        dr = state.positions[j][0] - er
        dc = state.positions[j][1] - ec
        cheb = max(abs(dr), abs(dc))
        if cheb <= FOV_RADIUS:
            others.append((cheb, j))
    others.sort()
    occupants = [ego] + [j for _, j in others[: N_SLOTS - 1]]

    slot_s = np.full((N_SLOTS, 2), EMPTY_SLOT, dtype=np.int16)
    slot_g = np.full((N_SLOTS, 2), EMPTY_SLOT, dtype=np.int16)
    slot_agents: list = [None] * N_SLOTS

    for slot, agent in enumerate(occupants):
        ar, ac = state.positions[agent]
        gr, gc = instance.goals[agent]
        s = (ar - er, ac - ec)
        g = (
            min(max(gr - er, COORD_MIN), COORD_MAX),
            min(max(gc - ec, COORD_MIN), COORD_MAX),
        )
        slot_s[slot] = s
        slot_g[slot] = g
        slot_agents[slot] = agent

        base = AGENT_BASE + slot * SLOT_LEN
        tokens[base + 0] = coord_id(s[0])
        tokens[base + 1] = coord_id(s[1])
        tokens[base + 2] = coord_id(g[0])
        tokens[base + 3] = coord_id(g[1])

        hist = histories.get(agent, []) if histories else []
        recent = list(hist[-HIST_LEN:])
        pad_n = HIST_LEN - len(recent)
        for k in range(HIST_LEN):
            if k < pad_n:
                tokens[base + HIST_OFFSET + k] = PAD_ID
            else:
                tokens[base + HIST_OFFSET + k] = action_id(recent[k - pad_n])

        est = None
        if est_override is not None:
            est = est_override.get(agent)
        if est is None:
            est = greedy_action(costfields[agent], (ar, ac), m)
        tokens[base + EST_OFFSET] = action_id(est)

    return ObservationBundle(
        tokens=tokens,
        slot_s=slot_s,
        slot_g=slot_g,
        slot_agents=tuple(slot_agents),
        ego=ego,
        step=state.step,
    )


def weight_sets(target: ObservationBundle) -> tuple[np.ndarray, np.ndarray]:
    """(a_mask, g_mask) for a target observation.

    History positions holding a pad token (early-episode fill) stay masked
    rather than entering A, keeping A/G disjoint from M.
    """
    a_mask = np.zeros(SEQ_LEN, dtype=bool)
    g_mask = np.zeros(SEQ_LEN, dtype=bool)
    for slot in range(N_SLOTS):
        if target.slot_agents[slot] is None:
            continue
        for p in hist_positions(slot):
            if target.tokens[p] != PAD_ID:
                a_mask[p] = True
        g_mask[est_position(slot)] = True
    return a_mask, g_mask


def build_training_samples(traj) -> list[TrainingSample]:
    """One sample per agent per step, wait-at-target steps included."""
    samples = []
    n = traj.instance.n_agents
    for t in range(traj.makespan):
        for i in range(n):
            target = traj.observations[t + 1][i]
            a_mask, g_mask = weight_sets(target)
            samples.append(
                TrainingSample(
                    input=traj.observations[t][i],
                    target_tokens=target.tokens,
                    target_action=int(traj.actions[t][i]),
                    a_mask=a_mask,
                    g_mask=g_mask,
                )
            )
    return samples


def extract_predicted_neighbor_actions(pred_tokens, slot_agents) -> dict:
    """Read predicted actions for occupied neighbour slots.

    Non-action tokens at an estimated-action position are skipped.
    """
    out = {}
    for slot in range(1, N_SLOTS):
        agent = slot_agents[slot]
        if agent is None:
            continue
        a = decode_action(int(pred_tokens[est_position(slot)]))
        if a is not None:
            out[agent] = a
    return out


def slots_from_tokens(tokens) -> tuple[np.ndarray, np.ndarray]:
    """Recover (slot_s, slot_g) from a (possibly predicted) token sequence.

    A slot counts as occupied only when all four coordinate tokens decode;
    anything else is treated as empty for encoding purposes.
    """
    slot_s = np.full((N_SLOTS, 2), EMPTY_SLOT, dtype=np.int16)
    slot_g = np.full((N_SLOTS, 2), EMPTY_SLOT, dtype=np.int16)
    for slot in range(N_SLOTS):
        base = AGENT_BASE + slot * SLOT_LEN
        vals = [decode_coord(int(tokens[base + k])) for k in range(4)]
        if any(v is None for v in vals):
            continue
        slot_s[slot] = (vals[0], vals[1])
        slot_g[slot] = (vals[2], vals[3])
    return slot_s, slot_g


# fixed (x, y) = (col offset, row offset) inputs for the 121 cost-map tokens
_rr, _cc = np.meshgrid(
    np.arange(-FOV_RADIUS, FOV_RADIUS + 1),
    np.arange(-FOV_RADIUS, FOV_RADIUS + 1),
    indexing="ij",
)
COST_XY = np.stack([_cc.reshape(-1), _rr.reshape(-1)], axis=1).astype(np.float64)
COST_XY.setflags(write=False)


def sre_xy_batch(slot_s: np.ndarray, slot_g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized sre_xy over N samples: (N,13,2)x2 -> (N,256,2), (N,256)."""
    n = slot_s.shape[0]
    xy = np.zeros((n, SEQ_LEN, 2), dtype=np.int16)
    mask = np.zeros((n, SEQ_LEN), dtype=bool)
    xy[:, :N_COST_TOKENS] = COST_XY.astype(np.int16)
    mask[:, :N_COST_TOKENS] = True
    for slot in range(N_SLOTS):
        occ = slot_s[:, slot, 0] != EMPTY_SLOT
        if not occ.any():
            continue
        base = AGENT_BASE + slot * SLOT_LEN
        s_xy = slot_s[occ, slot][:, ::-1]  # (row, col) -> (x=col, y=row)
        g_xy = slot_g[occ, slot][:, ::-1]
        xy[occ, base + 0] = s_xy
        xy[occ, base + 1] = s_xy
        xy[occ, base + 2] = g_xy
        xy[occ, base + 3] = g_xy
        d_xy = (g_xy - s_xy).astype(np.int16)
        for k in range(4, SLOT_LEN):
            xy[occ, base + k] = d_xy
        mask[occ, base:base + SLOT_LEN] = True
    return xy, mask


def sre_xy(slot_s: np.ndarray, slot_g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-position (x, y) inputs and validity mask for the encoding.

    Returns xy of shape (256, 2) and a boolean mask; masked-off positions
    (empty slots and the tail padding) encode to exactly zero.
    """
    xy = np.zeros((SEQ_LEN, 2), dtype=np.float64)
    mask = np.zeros(SEQ_LEN, dtype=bool)
    xy[:N_COST_TOKENS] = COST_XY
    mask[:N_COST_TOKENS] = True
    for slot in range(N_SLOTS):
        if slot_s[slot, 0] == EMPTY_SLOT:
            continue
        s_r, s_c = float(slot_s[slot, 0]), float(slot_s[slot, 1])
        g_r, g_c = float(slot_g[slot, 0]), float(slot_g[slot, 1])
        base = AGENT_BASE + slot * SLOT_LEN
        xy[base + 0] = xy[base + 1] = (s_c, s_r)
        xy[base + 2] = xy[base + 3] = (g_c, g_r)
        xy[base + 4:base + SLOT_LEN] = (g_c - s_c, g_r - s_r)
        mask[base:base + SLOT_LEN] = True
    return xy, mask

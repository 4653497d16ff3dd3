"""Episode execution under the three work modes.

Fast: act on the current observation. Slow: additionally predict the next
observation and feed the predicted neighbour actions into the next step's
estimated-action tokens, resyncing to greedy estimates every H-th step.
Thinking: every H steps read the environment once, then act on the model's
own predicted observations for the remaining H-1 steps.

Decisions are decentralized: the only inter-agent channel is the observable
state plus each ego's own predictions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import ProblemInstance, State, bfs_cost_to_goal, is_success, step
from .neural.network import forward_batch
from .tokenizer import (
    ObservationBundle,
    build_observation,
    extract_predicted_neighbor_actions,
    slots_from_tokens,
    sre_xy,
)

MODES = ("fast", "slow", "thinking")


@dataclass(frozen=True)
class ModeConfig:
    mode: str = "fast"
    horizon: int = 2
    greedy_resync: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode != "fast" and self.horizon < 2:
            raise ValueError("horizon must be >= 2 for slow/thinking modes")


@dataclass(frozen=True)
class EpisodeResult:
    success: bool
    steps_used: int
    paths: tuple
    makespan: int
    sum_of_costs: int
    collisions_resolved: int


class Env:
    """Mutable episode wrapper over the pure transition semantics."""

    def __init__(self, instance: ProblemInstance):
        self.instance = instance
        self.map = instance.map
        self.costfields = {i: bfs_cost_to_goal(instance.map, g) for i, g in enumerate(instance.goals)}
        self.state = State(positions=instance.starts, step=0)
        self.histories = {i: [] for i in range(instance.n_agents)}
        self.paths = [[p] for p in instance.starts]
        self.collisions_resolved = 0
        self.env_reads = 0

    @property
    def n_agents(self) -> int:
        return self.instance.n_agents

    def observe(self, ego: int, est_override=None) -> ObservationBundle:
        self.env_reads += 1
        return build_observation(
            self.state, ego, self.instance, self.costfields,
            est_override=est_override, histories=self.histories,
        )

    def apply(self, joint) -> tuple:
        new_state, resolved = step(self.state, joint, self.map)
        self.collisions_resolved += sum(1 for a, b in zip(joint, resolved) if a != b)
        for i, a in enumerate(resolved):
            self.histories[i].append(a)
            self.paths[i].append(new_state.positions[i])
        self.state = new_state
        return resolved

    def done(self) -> bool:
        return is_success(self.state, self.instance)

    def result(self) -> EpisodeResult:
        steps_used = self.state.step
        success = self.done()
        soc = 0
        for i, path in enumerate(self.paths):
            goal = self.instance.goals[i]
            cost = 0
            for t, pos in enumerate(path):
                if pos != goal:
                    cost = t + 1
            soc += min(cost, steps_used)
        return EpisodeResult(
            success=success,
            steps_used=steps_used,
            paths=tuple(tuple(p) for p in self.paths),
            makespan=steps_used,
            sum_of_costs=soc,
            collisions_resolved=self.collisions_resolved,
        )


def _forward_obs(params, bundles):
    tokens = np.stack([b.tokens for b in bundles]).astype(np.int64)
    xys, masks = [], []
    for b in bundles:
        xy, mask = sre_xy(b.slot_s, b.slot_g)
        xys.append(xy)
        masks.append(mask)
    return forward_batch(params, tokens, np.stack(xys), np.stack(masks))


def _forward_tokens(params, tokens_batch):
    slot_meta = [slots_from_tokens(t) for t in tokens_batch]
    xys, masks = [], []
    for slot_s, slot_g in slot_meta:
        xy, mask = sre_xy(slot_s, slot_g)
        xys.append(xy)
        masks.append(mask)
    tokens = np.stack(tokens_batch).astype(np.int64)
    return forward_batch(params, tokens, np.stack(xys), np.stack(masks))


def fast_decide(params, obs: ObservationBundle) -> int:
    """Argmax of the action head; ties break toward the lowest action code."""
    fast_logits, _ = _forward_obs(params, [obs])
    return int(np.argmax(fast_logits[0]))


def slow_decide(params, obs: ObservationBundle, cache: dict):
    """One slow-system step for a single ego.

    Returns (action, predicted next tokens, neighbour-action map); the cache
    is replaced by the new map, evicting entries for departed neighbours.
    """
    fast_logits, slow_logits = _forward_obs(params, [obs])
    action = int(np.argmax(fast_logits[0]))
    pred_tokens = slow_logits[0].argmax(-1).astype(np.uint8)
    nbr = extract_predicted_neighbor_actions(pred_tokens, obs.slot_agents)
    cache.clear()
    cache.update(nbr)
    return action, pred_tokens, nbr


def _run_fast(env: Env, params, step_limit: int):
    for _ in range(step_limit):
        if env.done():
            break
        bundles = [env.observe(i) for i in range(env.n_agents)]
        fast_logits, _ = _forward_obs(params, bundles)
        env.apply(tuple(int(a) for a in fast_logits.argmax(-1)))
    return env.result()


def _run_slow(env: Env, params, step_limit: int, cfg: ModeConfig):
    h = cfg.horizon
    caches = [dict() for _ in range(env.n_agents)]
    for t in range(step_limit):
        if env.done():
            break
        resync = cfg.greedy_resync and (t % h == h - 1)
        if resync:
            for c in caches:
                c.clear()
        bundles = [
            env.observe(i, est_override=None if resync else caches[i])
            for i in range(env.n_agents)
        ]
        fast_logits, slow_logits = _forward_obs(params, bundles)
        pred = slow_logits.argmax(-1).astype(np.uint8)
        for i in range(env.n_agents):
            nbr = extract_predicted_neighbor_actions(pred[i], bundles[i].slot_agents)
            caches[i].clear()
            caches[i].update(nbr)
        env.apply(tuple(int(a) for a in fast_logits.argmax(-1)))
    return env.result()


def thinking_cycle(params, env: Env, horizon: int, max_steps=None) -> list:
    """One read-then-imagine cycle; returns the executed joint actions.

    The first step acts on real observations and retains the predicted next
    tokens; the following horizon-1 steps feed each ego its own previous
    prediction, with slot geometry dequantized from the predicted coordinate
    tokens. Predictions the decoder cannot interpret are left as-is.
    """
    if horizon < 2:
        raise ValueError("thinking requires horizon >= 2")
    budget = horizon if max_steps is None else min(horizon, max_steps)
    executed = []
    pred_tokens = None
    for phase in range(budget):
        if env.done():
            break
        if phase == 0:
            bundles = [env.observe(i) for i in range(env.n_agents)]
            fast_logits, slow_logits = _forward_obs(params, bundles)
        else:
            fast_logits, slow_logits = _forward_tokens(params, pred_tokens)
        pred_tokens = [slow_logits[i].argmax(-1).astype(np.uint8) for i in range(env.n_agents)]
        joint = tuple(int(a) for a in fast_logits.argmax(-1))
        env.apply(joint)
        executed.append(joint)
    return executed


def _run_thinking(env: Env, params, step_limit: int, cfg: ModeConfig):
    while env.state.step < step_limit and not env.done():
        thinking_cycle(params, env, cfg.horizon, max_steps=step_limit - env.state.step)
    return env.result()


def run_episode(instance: ProblemInstance, params, mode_config: ModeConfig,
                step_limit: int, seed: int = 0) -> EpisodeResult:
    """Run one decentralized episode; deterministic for fixed inputs.

    The episode ends as soon as every agent sits on its goal simultaneously,
    or after step_limit environment steps.
    """
    if step_limit <= 0:
        raise ValueError("step_limit must be positive")
    env = Env(instance)
    if mode_config.mode == "fast":
        return _run_fast(env, params, step_limit)
    if mode_config.mode == "slow":
        return _run_slow(env, params, step_limit, mode_config)
    return _run_thinking(env, params, step_limit, mode_config)

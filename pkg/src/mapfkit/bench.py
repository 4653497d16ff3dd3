"""Benchmark harness: suites over map families, ablations, CSV/SVG outputs.

Per-episode seeds are derived by hashing (master seed, family, map index,
agent count, mode, horizon, seed index), so results are independent of
scheduling order and parallelism.
"""
from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import FREE, GridMap, generate_instance
from .mapgen import gen_maze, gen_random, gen_warehouse
from .neural.config import ModelParams, expected_shapes
from .runtime import ModeConfig, run_episode

FAMILIES = ("empty", "random", "mazes", "warehouse")


class ParamsIncompatible(ValueError):
    pass


class IoFailure(OSError):
    pass


@dataclass(frozen=True)
class SuiteConfig:
    family: str = "random"
    agent_counts: tuple = (4, 8, 16)
    n_maps: int = 16
    n_seeds: int = 1
    step_limit: int = 128
    modes: tuple = (ModeConfig("fast"),)
    master_seed: int = 0
    map_size: tuple = (17, 17)
    obstacle_density: float = 0.3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        counts = tuple(self.agent_counts)
        if not counts or any(c <= 0 for c in counts) or list(counts) != sorted(counts):
            raise ValueError("agent counts must be positive and ascending")
        if self.step_limit not in (128, 256):
            raise ValueError("step limit must be 128 or 256")
        object.__setattr__(self, "agent_counts", counts)
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "map_size", tuple(self.map_size))


@dataclass(frozen=True)
class EpisodeRecord:
    family: str
    map_name: str
    map_index: int
    agents: int
    seed_index: int
    mode: str
    horizon: int
    success: bool
    steps: int


@dataclass(frozen=True)
class SuiteResult:
    records: tuple
    provenance: dict = field(default_factory=dict, compare=False)

    def aggregate(self) -> dict:
        """(agents, mode, horizon) -> (success rate, mean steps of successes,
        episode count). SR is the exact mean of success indicators."""
        groups: dict = {}
        for r in self.records:
            groups.setdefault((r.agents, r.mode, r.horizon), []).append(r)
        out = {}
        for key, recs in sorted(groups.items()):
            n = len(recs)
            wins = [r for r in recs if r.success]
            sr = len(wins) / n
            mean_steps = sum(r.steps for r in wins) / len(wins) if wins else float("nan")
            out[key] = (sr, mean_steps, n)
        return out

    def success_rate(self) -> float:
        if not self.records:
            return 0.0
        return sum(1 for r in self.records if r.success) / len(self.records)


def episode_seed(master: int, family: str, map_index: int, agents: int,
                 mode: str, horizon: int, seed_index: int) -> int:
    key = f"{master}|{family}|{map_index}|{agents}|{mode}|{horizon}|{seed_index}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


def _map_seed(master: int, family: str, map_index: int) -> int:
    return episode_seed(master, family, map_index, 0, "map", 0, 0)


def suite_maps(config: SuiteConfig) -> list[GridMap]:
    h, w = config.map_size
    maps = []
    if config.family == "warehouse":
        return [gen_warehouse()]
    for i in range(config.n_maps):
        seed = _map_seed(config.master_seed, config.family, i)
        if config.family == "empty":
            cells = np.full((h, w), FREE, dtype=np.uint8)
            maps.append(GridMap(width=w, height=h, cells=cells, name=f"empty_{w}x{h}_{i}"))
        elif config.family == "random":
            maps.append(gen_random(w, h, config.obstacle_density, seed))
        else:
            maps.append(gen_maze(w if w % 2 else w - 1, h if h % 2 else h - 1, seed))
    return maps


def params_hash(params: ModelParams) -> str:
    digest = hashlib.sha256()
    digest.update(json.dumps(sorted(params.config.__dict__.items()), default=str).encode())
    for k in params.key_order():
        digest.update(k.encode())
        digest.update(np.ascontiguousarray(params.tensors[k]).tobytes())
    return digest.hexdigest()[:16]


def run_suite(config: SuiteConfig, params: ModelParams, parallelism: int = 1,
              commit: str = "unknown") -> SuiteResult:
    """Run every (map, agent count, seed, mode) episode and aggregate.

    The result set is identical for any parallelism level.
    """
    shapes = expected_shapes(params.config)
    if set(shapes) != set(params.tensors) or any(
        params.tensors[k].shape != s for k, s in shapes.items()
    ):
        raise ParamsIncompatible("params tensors do not match their config")

    maps = suite_maps(config)
    jobs = []
    for mi, m in enumerate(maps):
        for agents in config.agent_counts:
            for si in range(config.n_seeds):
                for mode in config.modes:
                    jobs.append((mi, m, agents, si, mode))

    def run_one(job):
        mi, m, agents, si, mode = job
        seed = episode_seed(
            config.master_seed, config.family, mi, agents, mode.mode, mode.horizon, si
        )
        instance = generate_instance(m, agents, seed)
        res = run_episode(instance, params, mode, config.step_limit, seed=seed)
        return EpisodeRecord(
            family=config.family,
            map_name=m.name,
            map_index=mi,
            agents=agents,
            seed_index=si,
            mode=mode.mode,
            horizon=mode.horizon,
            success=res.success,
            steps=res.steps_used,
        )

    if parallelism <= 1:
        records = [run_one(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(run_one, jobs))

    provenance = {
        "master_seed": config.master_seed,
        "commit": commit,
        "params_hash": params_hash(params),
    }
    return SuiteResult(records=tuple(records), provenance=provenance)


def ablation_horizon(config: SuiteConfig, params: ModelParams,
                     h_list=(2, 3, 4, 5), parallelism: int = 1) -> SuiteResult:
    """One suite per (mode, horizon); modes must be slow or thinking."""
    records = []
    provenance = {}
    for mode in config.modes:
        if mode.mode not in ("slow", "thinking"):
            raise ValueError("horizon ablation applies to slow/thinking modes")
        for h in h_list:
            sub = replace(config, modes=(replace(mode, horizon=h),))
            result = run_suite(sub, params, parallelism=parallelism)
            records.extend(result.records)
            provenance = result.provenance
    return SuiteResult(records=tuple(records), provenance=provenance)


@dataclass(frozen=True)
class SreAblationResult:
    with_sre: SuiteResult
    without_sre: SuiteResult

    @property
    def sr_with(self) -> float:
        return self.with_sre.success_rate()

    @property
    def sr_without(self) -> float:
        return self.without_sre.success_rate()

    @property
    def sr_delta(self) -> float:
        return self.sr_with - self.sr_without

    def per_family_delta(self) -> dict:
        fam = {r.family for r in self.with_sre.records}
        out = {}
        for f in sorted(fam):
            a = [r.success for r in self.with_sre.records if r.family == f]
            b = [r.success for r in self.without_sre.records if r.family == f]
            out[f] = (sum(a) / len(a), sum(b) / len(b), sum(a) / len(a) - sum(b) / len(b))
        return out


def ablation_sre(config: SuiteConfig, params_with: ModelParams,
                 params_without: ModelParams, parallelism: int = 1) -> SreAblationResult:
    return SreAblationResult(
        with_sre=run_suite(config, params_with, parallelism=parallelism),
        without_sre=run_suite(config, params_without, parallelism=parallelism),
    )


CSV_HEADER = ["family", "map", "agents", "seed", "mode", "H", "success", "steps"]


def emit_csv(result: SuiteResult, path):
    if not result.records:
        raise IoFailure("empty result")
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for r in result.records:
                w.writerow(
                    [r.family, r.map_name, r.agents, r.seed_index, r.mode,
                     r.horizon, int(r.success), r.steps]
                )
    except OSError as e:
        raise IoFailure(str(e)) from e


def read_csv(path) -> SuiteResult:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(
                EpisodeRecord(
                    family=row["family"],
                    map_name=row["map"],
                    map_index=0,
                    agents=int(row["agents"]),
                    seed_index=int(row["seed"]),
                    mode=row["mode"],
                    horizon=int(row["H"]),
                    success=bool(int(row["success"])),
                    steps=int(row["steps"]),
                )
            )
    return SuiteResult(records=tuple(records))


def emit_plot(result: SuiteResult, path):
    """Success rate vs agent count, one polyline per (mode, H), as SVG."""
    if not result.records:
        raise IoFailure("empty result")
    agg = result.aggregate()
    curves: dict = {}
    for (agents, mode, h), (sr, _, _) in agg.items():
        curves.setdefault((mode, h), []).append((agents, sr))

    width, height, margin = 480, 320, 48
    xs = sorted({a for pts in curves.values() for a, _ in pts})
    x_min, x_max = min(xs), max(xs)
    span = max(x_max - x_min, 1)

    def px(a):
        return margin + (a - x_min) / span * (width - 2 * margin)

    def py(sr):
        return height - margin - sr * (height - 2 * margin)

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">agents</text>',
        f'<text x="14" y="{height // 2}" font-size="12" transform="rotate(-90 14 {height // 2})" '
        f'text-anchor="middle">success rate</text>',
    ]
    for a in xs:
        parts.append(
            f'<text x="{px(a):.1f}" y="{height - margin + 16}" text-anchor="middle" '
            f'font-size="10">{a}</text>'
        )
    for frac in (0.0, 0.5, 1.0):
        parts.append(
            f'<text x="{margin - 6}" y="{py(frac) + 4:.1f}" text-anchor="end" '
            f'font-size="10">{frac:.1f}</text>'
        )
    for i, ((mode, h), pts) in enumerate(sorted(curves.items())):
        color = palette[i % len(palette)]
        pts = sorted(pts)
        coords = " ".join(f"{px(a):.2f},{py(sr):.2f}" for a, sr in pts)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        label = mode if mode == "fast" else f"{mode} H={h}"
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * i}" font-size="10" '
            f'fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(parts) + "\n")
    except OSError as e:
        raise IoFailure(str(e)) from e

"""Single command-line entry point: mapgen, expert, train, eval, play.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every run writes a
provenance JSON (versions, seeds, input hashes) so it can be reproduced.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import SuiteConfig, emit_csv, emit_plot, episode_seed, run_suite
from .dataset import read_dataset, write_dataset
from .grid import GridMap, generate_instance, load_map, save_map
from .mapgen import (
    RasterConfig,
    gen_maze,
    gen_random,
    gen_warehouse,
    load_tag_rules,
    osm_pipeline,
    write_map_files,
)
from .neural import (
    DivergenceDetected,
    ModelConfig,
    init_params,
    load_params,
    save_params,
    train,
)
from .runtime import ModeConfig, run_episode
from .solvers import Unsolved, run_expert_episode
from .tokenizer import build_training_samples


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_provenance(path, command: str, args: argparse.Namespace, seeds: dict,
                      inputs: list):
    record = {
        "command": command,
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "mapfkit": __version__,
        },
        "seeds": seeds,
        "input_hashes": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _derive_seed(master: int, index: int) -> int:
    key = f"{master}|{index}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


# --- mapgen ------------------------------------------------------------------

def cmd_mapgen(args, parser) -> int:
    sources = sum(bool(x) for x in (args.osm, args.random, args.maze, args.warehouse))
    if sources != 1:
        parser.error("exactly one of --osm/--random/--maze/--warehouse is required")
    out = Path(args.out)
    config = RasterConfig(
        resolution=args.res,
        tile_size=args.tile,
        morph_radius=args.morph_radius,
        smoothing=args.smooth,
    )
    inputs = []
    if args.osm:
        inputs.append(args.osm)
        rules = load_tag_rules(args.tag_rules) if args.tag_rules else None
        if args.tag_rules:
            inputs.append(args.tag_rules)
        doc = Path(args.osm).read_text()
        tiles, manifest = osm_pipeline(doc, config, rules=rules, name=Path(args.osm).stem)
        if not tiles:
            print("mapgen: no tiles survived rasterization", file=sys.stderr)
            return 1
    else:
        if args.random:
            w, h = args.random
            m = gen_random(w, h, args.density, args.seed)
        elif args.maze:
            w, h = args.maze
            m = gen_maze(w, h, args.seed)
        else:
            m = gen_warehouse()
        tiles, manifest = [m], [(m.name, "", m.n_free / (m.width * m.height))]
    write_map_files(tiles, manifest, out)
    _write_provenance(out / "provenance.json", "mapgen", args, {"seed": args.seed}, inputs)
    print(f"wrote {len(tiles)} map(s) to {out}")
    return 0


# --- expert ------------------------------------------------------------------

def _parse_agents(spec: str) -> tuple[int, int]:
    if "-" in spec:
        lo, hi = spec.split("-", 1)
        return int(lo), int(hi)
    v = int(spec)
    return v, v


def cmd_expert(args, parser) -> int:
    maps_dir = Path(args.maps)
    map_files = sorted(maps_dir.glob("*.map"))
    if not map_files:
        parser.error(f"no .map files in {maps_dir}")
    maps = [load_map(p.read_text(), name=p.stem) for p in map_files]
    lo, hi = _parse_agents(args.agents)

    rng = np.random.default_rng(args.seed)
    samples = []
    solved = 0
    for i in range(args.instances):
        m = maps[i % len(maps)]
        iseed = _derive_seed(args.seed, i)
        n_agents = int(rng.integers(lo, hi + 1))
        try:
            instance = generate_instance(m, n_agents, iseed)
            traj = run_expert_episode(instance, seed=iseed)
        except Unsolved:
            continue
        solved += 1
        samples.extend(build_training_samples(traj))

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(samples, out)
    rate = solved / args.instances if args.instances else 0.0
    _write_provenance(
        out.with_suffix(".provenance.json"), "expert", args, {"seed": args.seed},
        [str(p) for p in map_files],
    )
    print(f"samples={len(samples)} solve_rate={rate:.3f}")
    if rate < args.min_solve_rate:
        print(f"expert: solve rate {rate:.3f} below floor {args.min_solve_rate}", file=sys.stderr)
        return 1
    return 0


# --- train ---------------------------------------------------------------

def cmd_train(args, parser) -> int:
    ds = read_dataset(args.data)
    if args.resume:
        params = load_params(args.resume)
        config = params.config
    else:
        params = None
        config = ModelConfig(
            d_model=args.d_model,
            n_layers=args.layers,
            n_heads=args.heads,
            ffn_mult=args.ffn_mult,
            lr=args.lr,
            batch_size=args.batch,
            seed=args.seed,
            use_sre=args.sre == "on",
            dtype=args.dtype,
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")
    try:
        params, log = train(ds, config, params=params, steps=args.steps, log_path=log_path)
    except DivergenceDetected as e:
        print(f"train: {e}", file=sys.stderr)
        return 1
    save_params(params, out)
    _write_provenance(
        out.with_suffix(".provenance.json"), "train", args,
        {"seed": config.seed, "trained_steps": params.trained_steps}, [args.data],
    )
    first, last = log[0][3], log[-1][3]
    print(
        f"trained {len(log)} steps (total {params.trained_steps}), "
        f"loss {first:.4f} -> {last:.4f}, sre={'on' if config.use_sre else 'off'}"
    )
    return 0


# --- eval ----------------------------------------------------------------

def _load_suite_toml(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def cmd_eval(args, parser) -> int:
    try:
        modes = tuple(ModeConfig(mode=m, horizon=args.H) for m in args.mode)
    except ValueError as e:
        parser.error(str(e))
    overrides = {}
    if args.suite:
        overrides = _load_suite_toml(args.suite)
    config = SuiteConfig(
        family=overrides.get("family", args.family),
        agent_counts=tuple(overrides.get("agent_counts", [int(x) for x in args.agents.split(",")])),
        n_maps=overrides.get("n_maps", args.maps),
        n_seeds=overrides.get("n_seeds", args.seeds),
        step_limit=overrides.get("step_limit", args.limit),
        modes=modes,
        master_seed=overrides.get("master_seed", args.seed),
        map_size=tuple(overrides.get("map_size", [int(x) for x in args.size.split("x")])),
        obstacle_density=overrides.get("obstacle_density", args.density),
    )
    params = load_params(args.params)
    result = run_suite(config, params, parallelism=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_csv(result, out / "episodes.csv")
    emit_plot(result, out / "success_rate.svg")
    _write_provenance(
        out / "provenance.json", "eval", args,
        {"master_seed": config.master_seed, "params_hash": result.provenance["params_hash"]},
        [args.params] + ([args.suite] if args.suite else []),
    )
    print(f"{'agents':>6} {'mode':>9} {'H':>2} {'SR':>6} {'steps':>7} {'n':>4}")
    for (agents, mode, h), (sr, steps, n) in result.aggregate().items():
        step_txt = f"{steps:7.1f}" if steps == steps else "      -"
        print(f"{agents:>6} {mode:>9} {h:>2} {sr:6.3f} {step_txt} {n:>4}")
    return 0


# --- play ----------------------------------------------------------------

_AGENT_CHARS = "abcdefghijklmnopqrstuvwxyz"


def _render_frame(m: GridMap, positions, goals) -> str:
    rows = []
    for r in range(m.height):
        row = []
        for c in range(m.width):
            row.append("." if m.cells[r, c] == 0 else "@")
        rows.append(row)
    for i, g in enumerate(goals):
        if rows[g[0]][g[1]] == ".":
            rows[g[0]][g[1]] = "+"
    for i, p in enumerate(positions):
        ch = _AGENT_CHARS[i % len(_AGENT_CHARS)]
        rows[p[0]][p[1]] = ch.upper() if p == goals[i] else ch
    return "\n".join("".join(r) for r in rows)


def cmd_play(args, parser) -> int:
    try:
        m = load_map(Path(args.map).read_text(), name=Path(args.map).stem)
        params = load_params(args.params)
    except (OSError, ValueError) as e:
        print(f"play: {e}", file=sys.stderr)
        return 1
    mode = ModeConfig(mode=args.mode, horizon=args.H)
    instance = generate_instance(m, args.agents, args.seed)
    result = run_episode(instance, params, mode, args.limit, seed=args.seed)
    for t in range(result.steps_used + 1):
        positions = [p[min(t, len(p) - 1)] for p in result.paths]
        print(f"step {t}")
        print(_render_frame(m, positions, instance.goals))
        print()
    _write_provenance(
        Path(args.provenance), "play", args, {"seed": args.seed}, [args.map, args.params]
    )
    print("SUCCESS" if result.success else "FAILURE")
    return 0


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mapfkit", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("mapgen", help="generate .map files from OSM or synthetic families")
    p.add_argument("--osm", help="OSM XML export file")
    p.add_argument("--random", nargs=2, type=int, metavar=("W", "H"))
    p.add_argument("--maze", nargs=2, type=int, metavar=("W", "H"))
    p.add_argument("--warehouse", action="store_true")
    p.add_argument("--res", type=float, default=1.0, help="meters per cell")
    p.add_argument("--tile", type=int, default=256)
    p.add_argument("--morph-radius", type=int, default=1)
    p.add_argument("--smooth", action="store_true")
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tag-rules", help="JSON overrides for the OSM tag table")
    p.add_argument("--out", "-o", default="maps_out")
    p.set_defaults(func=cmd_mapgen)

    p = sub.add_parser("expert", help="generate an expert trajectory dataset")
    p.add_argument("--maps", required=True, help="directory of .map files")
    p.add_argument("--instances", type=int, required=True)
    p.add_argument("--agents", default="4", help="count or range, e.g. 4 or 2-6")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-solve-rate", type=float, default=0.8)
    p.add_argument("--out", "-o", required=True, help="output .mwds path")
    p.set_defaults(func=cmd_expert)

    p = sub.add_parser("train", help="train the dual-head model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", "-o", required=True, help="output .mwld params path")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ffn-mult", type=int, default=4)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sre", choices=("on", "off"), default="on")
    p.add_argument("--dtype", choices=("f64", "f32"), default="f64")
    p.add_argument("--resume", help="continue from an existing params file")
    p.add_argument("--log", help="training log CSV (default: alongside params)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run a benchmark suite")
    p.add_argument("--params", required=True)
    p.add_argument("--suite", help="TOML suite config")
    p.add_argument("--family", choices=("empty", "random", "mazes", "warehouse"), default="random")
    p.add_argument("--agents", default="4,8,16")
    p.add_argument("--maps", type=int, default=16)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--limit", type=int, choices=(128, 256), default=128)
    p.add_argument("--size", default="17x17", help="map size HxW")
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--mode", action="append", choices=("fast", "slow", "thinking"),
                   default=None, help="repeatable; default fast")
    p.add_argument("--H", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", "-o", default="eval_out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("play", help="print ASCII frames of one episode")
    p.add_argument("--map", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--agents", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("fast", "slow", "thinking"), default="fast")
    p.add_argument("--H", type=int, default=2)
    p.add_argument("--limit", type=int, default=128)
    p.add_argument("--provenance", default="play_provenance.json")
    p.set_defaults(func=cmd_play)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand == "eval" and args.mode is None:
        args.mode = ["fast"]
    try:
        return args.func(args, parser)
    except SystemExit:
        raise
    except Exception as e:  # runtime failure contract: exit 1
        print(f"mapfkit {args.subcommand}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

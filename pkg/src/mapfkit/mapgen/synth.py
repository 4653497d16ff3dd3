"""Synthetic map families: random, mazes, warehouse."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..grid import FREE, OBSTACLE, GridMap

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class Degenerate(RuntimeError):
    pass


class BadDimensions(ValueError):
    pass


def _largest_component_fraction(free: np.ndarray) -> float:
    labels, n = ndimage.label(free, structure=_CROSS)
    if n == 0:
        return 0.0
    sizes = ndimage.sum_labels(free, labels, index=range(1, n + 1))
    return float(max(sizes)) / float(free.sum())


def gen_random(w: int, h: int, obstacle_density: float, seed: int,
               max_tries: int = 200) -> GridMap:
    """Bernoulli obstacles; regenerated until one free component dominates."""
    if not 0.0 <= obstacle_density <= 0.6:
        raise ValueError("density must be in [0, 0.6]")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        obstacles = rng.random((h, w)) < obstacle_density
        free = ~obstacles
        if free.sum() == 0:
            continue
        if _largest_component_fraction(free) >= 0.8:
            cells = np.where(free, FREE, OBSTACLE).astype(np.uint8)
            return GridMap(width=w, height=h, cells=cells, name=f"random_{w}x{h}_s{seed}")
    raise Degenerate(f"no acceptable random map in {max_tries} tries")


def gen_maze(w: int, h: int, seed: int, extra_openings: float = 0.10) -> GridMap:
    """Recursive-backtracker maze on the odd lattice, then loop-making wall
    removal (a seeded fraction of walls separating two corridors)."""
    if w < 5 or h < 5 or w % 2 == 0 or h % 2 == 0:
        raise BadDimensions("maze needs odd width and height >= 5")
    rng = np.random.default_rng(seed)
    cells = np.full((h, w), OBSTACLE, dtype=np.uint8)

    start = (1, 1)
    cells[start] = FREE
    stack = [start]
    while stack:
        r, c = stack[-1]
        candidates = []
        for dr, dc in ((-2, 0), (0, 2), (2, 0), (0, -2)):
            nr, nc = r + dr, c + dc
            if 1 <= nr < h - 1 and 1 <= nc < w - 1 and cells[nr, nc] == OBSTACLE:
                candidates.append((nr, nc))
        if not candidates:
            stack.pop()
            continue
        nr, nc = candidates[int(rng.integers(len(candidates)))]
        cells[(r + nr) // 2, (c + nc) // 2] = FREE
        cells[nr, nc] = FREE
        stack.append((nr, nc))

    walls = []
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            if cells[r, c] != OBSTACLE:
                continue
            if cells[r - 1, c] == FREE and cells[r + 1, c] == FREE:
                walls.append((r, c))
            elif cells[r, c - 1] == FREE and cells[r, c + 1] == FREE:
                walls.append((r, c))
    n_remove = int(round(extra_openings * len(walls)))
    if n_remove > 0 and walls:
        for i in rng.choice(len(walls), size=min(n_remove, len(walls)), replace=False):
            cells[walls[i]] = FREE

    return GridMap(width=w, height=h, cells=cells, name=f"maze_{w}x{h}_s{seed}")


def gen_warehouse(rows: int = 33, cols: int = 46, shelf_len: int = 9,
                  aisle_w: int = 2) -> GridMap:
    """Periodic 1 x shelf_len shelf blocks with aisles and a free perimeter.

    The defaults tile a 33x46 grid exactly (4 shelves per shelf row).
    """
    if min(rows, cols, shelf_len, aisle_w) <= 0:
        raise ValueError("all warehouse parameters must be positive")
    cells = np.full((rows, cols), FREE, dtype=np.uint8)
    for r in range(aisle_w, rows - aisle_w, aisle_w + 1):
        c0 = aisle_w
        while c0 + shelf_len <= cols - aisle_w:
            cells[r, c0:c0 + shelf_len] = OBSTACLE
            c0 += shelf_len + aisle_w
    return GridMap(width=cols, height=rows, cells=cells,
                   name=f"warehouse_{rows}x{cols}")

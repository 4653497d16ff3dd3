"""Morphological cleanup of rasterized grids."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..grid import FREE, OBSTACLE, GridMap
from .raster import RasterConfig


def _closing_then_opening(free: np.ndarray, radius: int) -> tuple[np.ndarray, np.ndarray]:
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    pad = radius + 1  # off-map behaves as obstacle
    padded = np.pad(free, pad, constant_values=False)
    closed = ndimage.binary_closing(padded, structure=structure)
    opened = ndimage.binary_opening(closed, structure=structure)
    sl = slice(pad, -pad)
    return opened[sl, sl], closed[sl, sl]


def _majority_smooth(free: np.ndarray, max_rounds: int = 64) -> np.ndarray:
    """Boundary majority filter, iterated to a fixed point (capped)."""
    kernel = np.ones((3, 3), dtype=np.int64)
    out = free
    for _ in range(max_rounds):
        f = out.astype(np.int64)
        free_neighbors = ndimage.convolve(f, kernel, mode="constant", cval=0)
        mins = ndimage.minimum_filter(f, size=3, mode="constant", cval=0)
        maxs = ndimage.maximum_filter(f, size=3, mode="constant", cval=0)
        boundary = mins != maxs
        nxt = out.copy()
        nxt[boundary] = free_neighbors[boundary] >= 5
        if np.array_equal(nxt, out):
            return nxt
        out = nxt
    return out


def morph_clean(m: GridMap, config: RasterConfig, max_passes: int = 16) -> GridMap:
    """Closing then opening of the free mask; optional boundary smoothing.

    The pass is repeated until the mask is stable, which makes the operation
    idempotent. Smoothing is clipped to each pass's closing envelope, so free
    cells never appear outside the closing of the original free mask (the
    envelopes only shrink between passes).
    """
    cur = m.cells == FREE
    radius = config.morph_radius
    for _ in range(max_passes):
        if radius > 0:
            opened, closed = _closing_then_opening(cur, radius)
        else:
            opened, closed = cur, cur
        nxt = (_majority_smooth(opened) & closed) if config.smoothing else opened
        if np.array_equal(nxt, cur):
            break
        cur = nxt
    cells = np.where(cur, FREE, OBSTACLE).astype(np.uint8)
    return GridMap(width=m.width, height=m.height, cells=cells, name=m.name)

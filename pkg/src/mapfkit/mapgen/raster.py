"""Rasterization of geo features onto an occupancy grid.

Geometry convention (shared with the test oracle): a cell is stamped by a
walkable way when its center lies within width/2 cells of the way's
centerline; obstacle rings capture cells whose center is inside the ring
(even-odd rule); obstacle lines capture centers within half a cell. Obstacles
are stamped after walkables and win ties.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from ..grid import FREE, OBSTACLE, GridMap
from .osm import GeoFeatures

import numpy as np

M_PER_DEG_LAT = 111132.0


class EmptyBBox(ValueError):
    pass


class MapTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class RasterConfig:
    resolution: float = 1.0  # meters per cell
    tile_size: int = 256
    morph_radius: int = 1
    smoothing: bool = False

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.tile_size < 16:
            raise ValueError("tile size must be >= 16")


def project(features: GeoFeatures):
    """Equirectangular projection about the bbox center, y growing southward.

    Returns (to_xy, width_m, height_m) where to_xy maps (lat, lon) to meters
    from the bbox's north-west corner.
    """
    min_lat, min_lon, max_lat, max_lon = features.bbox
    lat0 = 0.5 * (min_lat + max_lat)
    m_per_deg_lon = M_PER_DEG_LAT * math.cos(math.radians(lat0))

    def to_xy(lat, lon):
        return ((lon - min_lon) * m_per_deg_lon, (max_lat - lat) * M_PER_DEG_LAT)

    width_m = (max_lon - min_lon) * m_per_deg_lon
    height_m = (max_lat - min_lat) * M_PER_DEG_LAT
    return to_xy, width_m, height_m


def _seg_dist2(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    l2 = dx * dx + dy * dy
    if l2 == 0.0:
        t = 0.0
    else:
        t = ((px - ax) * dx + (py - ay) * dy) / l2
        t = min(1.0, max(0.0, t))
    qx, qy = ax + t * dx, ay + t * dy
    return (px - qx) ** 2 + (py - qy) ** 2


def _point_in_ring(px, py, ring):
    inside = False
    for i in range(len(ring) - 1):
        x1, y1 = ring[i]
        x2, y2 = ring[i + 1]
        if (y1 > py) != (y2 > py):
            xt = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < xt:
                inside = not inside
    return inside


def rasterize(features: GeoFeatures, config: RasterConfig, name: str = "osm") -> GridMap:
    """Project and stamp features; every cell starts as an obstacle."""
    to_xy, width_m, height_m = project(features)
    res = config.resolution
    width = int(math.ceil(width_m / res))
    height = int(math.ceil(height_m / res))
    if width < 1 or height < 1:
        raise EmptyBBox(f"degenerate bbox {features.bbox}")

    cells = np.full((height, width), OBSTACLE, dtype=np.uint8)

    def cell_range(lo, hi, n):
        a = max(int(math.floor(lo / res - 0.5)), 0)
        b = min(int(math.ceil(hi / res + 0.5)), n - 1)
        return a, b

    for coords, width_cells in features.walkable_ways:
        half = 0.5 * width_cells * res
        pts = [to_xy(lat, lon) for lat, lon in coords]
        for (ax, ay), (bx, by) in zip(pts, pts[1:]):
            c0, c1 = cell_range(min(ax, bx) - half, max(ax, bx) + half, width)
            r0, r1 = cell_range(min(ay, by) - half, max(ay, by) + half, height)
            for r in range(r0, r1 + 1):
                py = (r + 0.5) * res
                for c in range(c0, c1 + 1):
                    px = (c + 0.5) * res
                    if _seg_dist2(px, py, ax, ay, bx, by) <= half * half:
                        cells[r, c] = FREE

    for ring in features.obstacle_rings:
        pts = [to_xy(lat, lon) for lat, lon in ring]
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        c0, c1 = cell_range(min(xs), max(xs), width)
        r0, r1 = cell_range(min(ys), max(ys), height)
        for r in range(r0, r1 + 1):
            py = (r + 0.5) * res
            for c in range(c0, c1 + 1):
                px = (c + 0.5) * res
                if _point_in_ring(px, py, pts):
                    cells[r, c] = OBSTACLE

    for line in features.obstacle_lines:
        half = 0.5 * res
        pts = [to_xy(lat, lon) for lat, lon in line]
        for (ax, ay), (bx, by) in zip(pts, pts[1:]):
            c0, c1 = cell_range(min(ax, bx) - half, max(ax, bx) + half, width)
            r0, r1 = cell_range(min(ay, by) - half, max(ay, by) + half, height)
            for r in range(r0, r1 + 1):
                py = (r + 0.5) * res
                for c in range(c0, c1 + 1):
                    px = (c + 0.5) * res
                    if _seg_dist2(px, py, ax, ay, bx, by) <= half * half:
                        cells[r, c] = OBSTACLE

    return GridMap(width=width, height=height, cells=cells, name=name)


def tile(m: GridMap, config: RasterConfig, min_free_fraction: float = 0.05) -> list:
    """Cut non-overlapping tile_size squares, row-major, dropping tiles with
    fewer than min_free_fraction free cells."""
    size = config.tile_size
    if m.height < size or m.width < size:
        raise MapTooSmall(f"{m.height}x{m.width} smaller than tile size {size}")
    out = []
    for tr, r0 in enumerate(range(0, m.height - size + 1, size)):
        for tc, c0 in enumerate(range(0, m.width - size + 1, size)):
            block = m.cells[r0:r0 + size, c0:c0 + size]
            free_frac = float(np.count_nonzero(block == FREE)) / block.size
            if free_frac < min_free_fraction:
                continue
            out.append(
                GridMap(
                    width=size,
                    height=size,
                    cells=block.copy(),
                    name=f"{m.name}_r{tr}_c{tc}",
                )
            )
    return out

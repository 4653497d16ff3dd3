"""Map generation: OSM rasterization pipeline and synthetic families."""
from __future__ import annotations

import csv

from ..grid import FREE, GridMap, save_map
from .morph import morph_clean
from .osm import (
    DEFAULT_TAG_RULES,
    GeoFeatures,
    MalformedXml,
    MissingNodeRef,
    load_tag_rules,
    parse_osm,
)
from .raster import EmptyBBox, MapTooSmall, RasterConfig, project, rasterize, tile
from .synth import BadDimensions, Degenerate, gen_maze, gen_random, gen_warehouse

__all__ = [
    "BadDimensions",
    "DEFAULT_TAG_RULES",
    "Degenerate",
    "EmptyBBox",
    "GeoFeatures",
    "MalformedXml",
    "MapTooSmall",
    "MissingNodeRef",
    "RasterConfig",
    "gen_maze",
    "gen_random",
    "gen_warehouse",
    "load_tag_rules",
    "morph_clean",
    "osm_pipeline",
    "parse_osm",
    "project",
    "rasterize",
    "tile",
    "write_map_files",
]


def osm_pipeline(document: str, config: RasterConfig, rules=None, name: str = "osm"):
    """parse -> rasterize -> morphology -> tiles. Returns (tiles, manifest).

    Manifest rows are (tile name, bbox string, free-cell fraction); the bbox
    is the source document's lat/lon bounding box.
    """
    feats = parse_osm(document, rules=rules)
    grid = rasterize(feats, config, name=name)
    grid = morph_clean(grid, config)
    if grid.height >= config.tile_size and grid.width >= config.tile_size:
        tiles = tile(grid, config)
    else:
        tiles = [grid] if grid.n_free > 0 else []
    bbox_str = "{:.7f},{:.7f},{:.7f},{:.7f}".format(*feats.bbox)
    manifest = [
        (t.name, bbox_str, t.n_free / (t.width * t.height)) for t in tiles
    ]
    return tiles, manifest


def write_map_files(tiles, manifest, out_dir):
    """Save tiles as .map files plus a manifest.csv; deterministic bytes."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for t in tiles:
        (out_dir / f"{t.name}.map").write_text(save_map(t))
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tile", "bbox", "free_fraction"])
        for name, bbox, frac in manifest:
            w.writerow([name, bbox, f"{frac:.6f}"])

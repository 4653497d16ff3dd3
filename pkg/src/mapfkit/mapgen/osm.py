"""OpenStreetMap XML ingestion.

Tag handling is a data-driven rule table: highway values map to walkable
width classes (cells); building/natural/landuse/barrier tags mark obstacles.
The defaults are deliberately editable configuration, not a fixed taxonomy.
"""
from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field


class MalformedXml(ValueError):
    pass


class MissingNodeRef(ValueError):
    pass


DEFAULT_TAG_RULES = {
    "walkable_highway_widths": {
        "footway": 3,
        "path": 3,
        "steps": 3,
        "cycleway": 3,
        "track": 3,
        "pedestrian": 5,
        "residential": 5,
        "living_street": 5,
        "service": 5,
        "unclassified": 5,
        "tertiary": 5,
        "secondary": 5,
        "primary": 5,
    },
    "obstacle_natural": ["water", "wood"],
    "obstacle_landuse": ["industrial", "construction"],
}


def load_tag_rules(path) -> dict:
    with open(path) as fh:
        rules = json.load(fh)
    merged = json.loads(json.dumps(DEFAULT_TAG_RULES))
    merged.update(rules)
    return merged


@dataclass
class GeoFeatures:
    """Vector features in (lat, lon); rings are closed (first == last)."""

    walkable_ways: list = field(default_factory=list)  # (coords, width_cells)
    obstacle_rings: list = field(default_factory=list)
    obstacle_lines: list = field(default_factory=list)
    bbox: tuple = (0.0, 0.0, 0.0, 0.0)  # (min_lat, min_lon, max_lat, max_lon)


def parse_osm(document: str, rules: dict | None = None) -> GeoFeatures:
    """Classify ways of an OSM XML export into walkable and obstacle features."""
    rules = rules or DEFAULT_TAG_RULES
    widths = rules["walkable_highway_widths"]
    natural = set(rules["obstacle_natural"])
    landuse = set(rules["obstacle_landuse"])

    try:
        root = ET.fromstring(document)
    except ET.ParseError as e:
        raise MalformedXml(str(e)) from e

    nodes = {}
    for nd in root.iter("node"):
        nodes[nd.attrib["id"]] = (float(nd.attrib["lat"]), float(nd.attrib["lon"]))

    feats = GeoFeatures()
    used_coords = []
    for way in root.iter("way"):
        coords = []
        for ref in way.iter("nd"):
            rid = ref.attrib["ref"]
            if rid not in nodes:
                raise MissingNodeRef(f"way {way.attrib.get('id')} references missing node {rid}")
            coords.append(nodes[rid])
        if len(coords) < 2:
            continue
        tags = {t.attrib["k"]: t.attrib["v"] for t in way.iter("tag")}

        highway = tags.get("highway")
        if highway in widths:
            feats.walkable_ways.append((coords, int(widths[highway])))
            used_coords.extend(coords)
            continue

        is_obstacle = (
            "building" in tags
            or tags.get("natural") in natural
            or tags.get("landuse") in landuse
            or "barrier" in tags
        )
        if is_obstacle:
            if len(coords) >= 4 and coords[0] == coords[-1]:
                feats.obstacle_rings.append(coords)
            else:
                feats.obstacle_lines.append(coords)
            used_coords.extend(coords)

    bounds = root.find("bounds")
    lats = [c[0] for c in used_coords]
    lons = [c[1] for c in used_coords]
    if bounds is not None:
        lats += [float(bounds.attrib["minlat"]), float(bounds.attrib["maxlat"])]
        lons += [float(bounds.attrib["minlon"]), float(bounds.attrib["maxlon"])]
    if lats:
        feats.bbox = (min(lats), min(lons), max(lats), max(lons))
    return feats

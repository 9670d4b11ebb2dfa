"""Road-vector extracts (OSM XML or pre-parsed JSON) to ego-centric SD maps."""

from __future__ import annotations

import json
import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ParseError
from .types import ROAD_CLASSES, Extent, GeoPose, SDMap, SDPolyline

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6378137.0

_CLASS_ALIASES = {
    "motorway_link": "motorway",
    "trunk_link": "trunk",
    "primary_link": "primary",
    "secondary_link": "secondary",
    "tertiary_link": "tertiary",
    "living_street": "residential",
    "unclassified": "residential",
}
_NON_ROAD = {"footway", "path", "cycleway", "steps", "pedestrian", "bridleway", "corridor", "proposed", "construction"}


@dataclass
class RoadExtract:
    nodes: dict[int, tuple[float, float]]  # id -> (lat, lon)
    ways: list[dict] = field(default_factory=list)  # {"id", "nodes": [...], "tags": {...}}


def _line_col_to_offset(text: bytes, line: int, col: int) -> int:
    offset = 0
    for _ in range(line - 1):
        nl = text.find(b"\n", offset)
        if nl < 0:
            break
        offset = nl + 1
    return offset + col


def parse_osm_xml(data: bytes) -> RoadExtract:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        raise ParseError(f"malformed OSM XML: {exc}", _line_col_to_offset(data, line, col)) from exc
    nodes: dict[int, tuple[float, float]] = {}
    ways: list[dict] = []
    for el in root:
        if el.tag == "node":
            try:
                nodes[int(el.attrib["id"])] = (float(el.attrib["lat"]), float(el.attrib["lon"]))
            except (KeyError, ValueError) as exc:
                raise ParseError(f"bad node element {el.attrib}: {exc}") from exc
        elif el.tag == "way":
            refs = [int(nd.attrib["ref"]) for nd in el.findall("nd")]
            tags = {t.attrib["k"]: t.attrib["v"] for t in el.findall("tag")}
            ways.append({"id": int(el.attrib.get("id", len(ways))), "nodes": refs, "tags": tags})
    return RoadExtract(nodes, ways)


def parse_road_json(data: bytes) -> RoadExtract:
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed road JSON: {exc.msg}", len(text[: exc.pos].encode())) from exc
    raw_nodes = doc.get("nodes", {})
    if isinstance(raw_nodes, dict):
        nodes = {int(k): (float(v[0]), float(v[1])) for k, v in raw_nodes.items()}
    else:
        nodes = {int(n["id"]): (float(n["lat"]), float(n["lon"])) for n in raw_nodes}
    ways = [
        {"id": int(w.get("id", i)), "nodes": [int(r) for r in w["nodes"]], "tags": dict(w.get("tags", {}))}
        for i, w in enumerate(doc.get("ways", []))
    ]
    return RoadExtract(nodes, ways)


def load_road_source(source) -> RoadExtract:
    """Accept a RoadExtract, a path to ``.osm``/``.xml``/``.json``, or raw bytes."""
    if isinstance(source, RoadExtract):
        return source
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    else:
        data = bytes(source)
    head = data.lstrip()[:1]
    if head == b"<":
        return parse_osm_xml(data)
    if head in (b"{", b"["):
        return parse_road_json(data)
    raise ParseError("unrecognized road-vector format", 0)


def road_attributes(tags: dict) -> tuple[str, int, bool, bool] | None:
    """(road_class, lane_count, one_way, reversed) or None for non-road ways."""
    hw = tags.get("highway")
    if hw is None or hw in _NON_ROAD:
        return None
    cls = _CLASS_ALIASES.get(hw, hw)
    if cls not in ROAD_CLASSES:
        cls = "other"
    try:
        lanes = int(float(str(tags.get("lanes", "0")).split(";")[0]))
    except ValueError:
        lanes = 0
    ow = str(tags.get("oneway", "no")).lower()
    one_way = ow in ("yes", "true", "1", "-1") or hw in ("motorway",) and ow != "no"
    return cls, lanes, one_way, ow == "-1"


def latlon_to_ego(lat, lon, pose: GeoPose) -> tuple[np.ndarray, np.ndarray]:
    """Equirectangular projection about the pose, then rotation into the ego frame."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    k = math.pi / 180.0 * EARTH_RADIUS_M
    dlon = (lon - pose.lon + 180.0) % 360.0 - 180.0
    east = dlon * k * math.cos(math.radians(pose.lat))
    north = (lat - pose.lat) * k
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    return east * c + north * s, -east * s + north * c


def ego_to_latlon(x, y, pose: GeoPose) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    east = x * c - y * s
    north = x * s + y * c
    k = math.pi / 180.0 * EARTH_RADIUS_M
    return pose.lat + north / k, pose.lon + east / (k * math.cos(math.radians(pose.lat)))


def _clip_segment(p, q, hx, hy):
    """Liang-Barsky clip of segment p->q to |x|<=hx, |y|<=hy; returns (t0, t1) or None."""
    t0, t1 = 0.0, 1.0
    d = q - p
    for pk, qk in (
        (-d[0], p[0] + hx),
        (d[0], hx - p[0]),
        (-d[1], p[1] + hy),
        (d[1], hy - p[1]),
    ):
        if pk == 0.0:
            if qk < 0.0:
                return None
            continue
        t = qk / pk
        if pk < 0.0:
            if t > t1:
                return None
            t0 = max(t0, t)
        else:
            if t < t0:
                return None
            t1 = min(t1, t)
    return t0, t1


def clip_polyline(points: np.ndarray, hx: float, hy: float, eps: float = 1e-9) -> list[np.ndarray]:
    """Clip a polyline (n, D>=2; clipping on the first two columns) to a centered rectangle.

    Pieces that leave and re-enter the rectangle are returned separately.
    Extra columns (e.g. z) are interpolated linearly.
    """
    pts = np.asarray(points, dtype=np.float64)
    pieces: list[list[np.ndarray]] = []
    current: list[np.ndarray] | None = None
    for a, b in zip(pts[:-1], pts[1:]):
        span = _clip_segment(a[:2], b[:2], hx, hy)
        if span is None:
            current = None
            continue
        t0, t1 = span
        pa = a + t0 * (b - a)
        pb = a + t1 * (b - a)
        if current is not None and t0 == 0.0:
            if np.linalg.norm(current[-1][:2] - pa[:2]) > eps:
                current.append(pa)
        else:
            current = [pa]
            pieces.append(current)
        if np.linalg.norm(current[-1][:2] - pb[:2]) > eps:
            current.append(pb)
        if t1 < 1.0:
            current = None
    out = []
    for piece in pieces:
        arr = np.asarray(piece)
        arr[:, 0] = np.clip(arr[:, 0], -hx, hx)
        arr[:, 1] = np.clip(arr[:, 1], -hy, hy)
        if len(arr) >= 2:
            out.append(arr)
    return out


def extract_local_sd(source, pose: GeoPose, extent: Extent | None = None) -> SDMap:
    """Project, rotate and clip every road way of ``source`` into the ego window."""
    extent = extent or Extent()
    extract = load_road_source(source)
    polylines: list[SDPolyline] = []
    for way in extract.ways:
        attrs = road_attributes(way["tags"])
        if attrs is None:
            continue
        cls, lanes, one_way, reverse = attrs
        coords = [extract.nodes[n] for n in way["nodes"] if n in extract.nodes]
        if len(coords) < 2:
            continue
        if len(coords) != len(way["nodes"]):
            logger.warning("way %s references missing nodes", way["id"])
        ll = np.asarray(coords)
        x, y = latlon_to_ego(ll[:, 0], ll[:, 1], pose)
        pts = np.stack([x, y], axis=1)
        if reverse:
            pts = pts[::-1]
        for piece in clip_polyline(pts, extent.half_x, extent.half_y):
            polylines.append(SDPolyline(piece, cls, lanes, one_way))
    return SDMap(polylines, pose, extent)

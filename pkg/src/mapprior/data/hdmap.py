"""Ground-truth lane graphs from lane-level HD records.

Dataset-specific readers only need to produce an :class:`HDRecord`; this
module handles the ego transform, window clipping, resampling and
connectivity repair.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ParseError
from ..geo.osm import clip_polyline, latlon_to_ego
from ..geo.types import Extent, GeoPose
from ..polyline import polyline_length, resample_polyline
from .types import N_POINTS, LaneGraph

logger = logging.getLogger(__name__)


@dataclass
class HDLane:
    centerline: np.ndarray  # (k, 3) local ENU meters (east, north, up)
    successors: list = field(default_factory=list)


@dataclass
class HDRecord:
    """Lane centerlines in a local ENU frame anchored at ``origin`` (lat, lon)."""

    lanes: dict
    origin: tuple[float, float]

    @classmethod
    def from_json(cls, text: str) -> "HDRecord":
        """``{"origin": [lat, lon], "lanes": {id: {"centerline": [[e, n, u], ...], "successors": [id, ...]}}}``."""
        try:
            d = json.loads(text)
            lanes = {
                str(k): HDLane(np.asarray(v["centerline"], dtype=np.float64), [str(s) for s in v.get("successors", [])])
                for k, v in d["lanes"].items()
            }
            return cls(lanes, (float(d["origin"][0]), float(d["origin"][1])))
        except json.JSONDecodeError as exc:
            raise ParseError(f"HD record is not valid JSON: {exc.msg}", offset=len(text[: exc.pos].encode())) from exc
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"HD record has unexpected structure: {exc!r}") from exc


def _to_ego(points: np.ndarray, origin: tuple[float, float], pose: GeoPose) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[1] == 2:
        pts = np.concatenate([pts, np.zeros((len(pts), 1))], axis=1)
    # offset of the pose from the record origin in ENU meters
    anchor = GeoPose(origin[0], origin[1], 0.0)
    ox, oy = latlon_to_ego(pose.lat, pose.lon, anchor)
    east = pts[:, 0] - float(ox)
    north = pts[:, 1] - float(oy)
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    return np.stack([east * c + north * s, -east * s + north * c, pts[:, 2]], axis=1)


def _relink(successors: dict, kept: set) -> dict:
    """Successor sets restricted to ``kept``, bridging through dropped lanes."""
    out = {}
    for lane in kept:
        found, stack, seen = set(), list(successors.get(lane, ())), set()
        while stack:
            nxt = stack.pop()
            if nxt in seen:
                continue
            seen.add(nxt)
            if nxt in kept:
                found.add(nxt)
            else:
                stack.extend(successors.get(nxt, ()))
        found.discard(lane)
        out[lane] = found
    return out


def hdmap_to_lanegraph(
    record: HDRecord, pose: GeoPose, extent: Extent | None = None, n_points: int = N_POINTS
) -> LaneGraph:
    """Transform, clip and resample every lane; drop empty ones and re-link around them.

    A lane leaving and re-entering the window keeps only its longest inside
    piece. Output lane order follows the record's lane order.
    """
    extent = extent or Extent()
    order = list(record.lanes.keys())
    successors = {lid: list(record.lanes[lid].successors) for lid in order}
    geometry = {}
    for lid in order:
        pts = _to_ego(record.lanes[lid].centerline, record.origin, pose)
        pieces = clip_polyline(pts, extent.half_x, extent.half_y)
        pieces = [p for p in pieces if polyline_length(p[:, :2]) > 0.0]
        if not pieces:
            if len(pts) >= 2 and extent.contains(pts[:, 0], pts[:, 1]).any():
                logger.warning("lane %s has fewer than 2 surviving points, dropped", lid)
            continue
        piece = max(pieces, key=lambda p: polyline_length(p))
        geometry[lid] = resample_polyline(piece, n_points)

    kept_ids = [lid for lid in order if lid in geometry]
    linked = _relink(successors, set(kept_ids))
    index = {lid: i for i, lid in enumerate(kept_ids)}
    n = len(kept_ids)
    adj = np.zeros((n, n), dtype=np.uint8)
    for lid in kept_ids:
        for succ in linked[lid]:
            adj[index[lid], index[succ]] = 1
    if n == 0:
        return LaneGraph.empty(n_points)
    points = np.stack([geometry[lid] for lid in kept_ids])
    return LaneGraph(points, np.ones(n), adj)

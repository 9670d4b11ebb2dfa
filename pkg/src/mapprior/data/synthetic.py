"""Procedural road scenes for desk-scale training and tests.

Layouts
-------
``straight`` / ``curve``
    One carriageway of ``lanes_per_road`` lanes, all flowing along +x (the
    ego's direction), centered on the road skeleton.
``t_intersection`` / ``crossroad``
    Junction at ``(cx, 0)`` with two-way arms (west, east, south and, for the
    crossroad, north). Each arm carries ``lanes_per_road`` lanes per
    direction, right-hand traffic. Turn movements are realised as connector
    lanes inside the junction box: straight k -> k for every lane index,
    left turns from the innermost lane (0), right turns from the outermost
    lane. A 1-lane crossroad therefore has 12 connectors; the adjacency holds
    incoming -> connector -> outgoing edges.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import cv2
import numpy as np

from ..errors import InputError
from ..geo.osm import clip_polyline
from ..geo.types import Extent, GeoPose, SatelliteImage, SDMap, SDPolyline
from .hdmap import HDLane, HDRecord, hdmap_to_lanegraph
from .types import N_POINTS, SceneBundle

LAYOUTS = ("straight", "curve", "t_intersection", "crossroad")
LAYOUT_ALIASES = {"T-intersection": "t_intersection", "t-intersection": "t_intersection", "T": "t_intersection"}
RASTER_MPP = 0.2
ROAD_COLOR = np.array([112, 112, 116], dtype=np.float64)
MARK_COLOR = np.array([225, 225, 215], dtype=np.float64)
ARM_LENGTH = 90.0

_ARMS = {"east": (1.0, 0.0), "north": (0.0, 1.0), "west": (-1.0, 0.0), "south": (0.0, -1.0)}
_LAYOUT_ARMS = {
    "t_intersection": ("east", "west", "south"),
    "crossroad": ("east", "north", "west", "south"),
}


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    layout: str = "straight"
    lanes_per_road: int = 1
    lane_width: float = 3.5
    curvature: float = 0.0
    texture_noise: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "layout", LAYOUT_ALIASES.get(self.layout, self.layout))
        if self.layout not in LAYOUTS:
            raise InputError(f"layout: must be one of {LAYOUTS}, got {self.layout!r}")
        if not 1 <= int(self.lanes_per_road) <= 3:
            raise InputError(f"lanes_per_road: must be in 1..3, got {self.lanes_per_road}")
        if not 2.5 <= self.lane_width <= 5.0:
            raise InputError(f"lane_width: must be in [2.5, 5.0] m, got {self.lane_width}")
        if not abs(self.curvature) <= 0.05:
            raise InputError(f"curvature: must be within +-0.05 1/m, got {self.curvature}")
        if not 0.0 <= self.texture_noise <= 64.0:
            raise InputError(f"texture_noise: must be in [0, 64], got {self.texture_noise}")
        if int(self.seed) < 0:
            raise InputError(f"seed: must be non-negative, got {self.seed}")


def _right(d):
    return np.array([d[1], -d[0]])


def _left(d):
    return np.array([-d[1], d[0]])


def _bezier(p0, p1, p2, p3, n=24):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * p1 + 3 * (1 - t) * t**2 * p2 + t**3 * p3


def _line(a, b, n=24):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return a + t * (b - a)


def _carriageway(spec: SyntheticSpec, rng):
    """Lanes (ego xy) and SD skeletons for straight/curve layouts."""
    n, w = spec.lanes_per_road, spec.lane_width
    # ego rides on a random lane of the carriageway
    ego_lane = int(rng.integers(n))
    shift = -(ego_lane - (n - 1) / 2.0) * w
    kappa = spec.curvature if spec.layout == "curve" else 0.0
    s = np.linspace(-ARM_LENGTH, ARM_LENGTH, 121)
    if abs(kappa) < 1e-9:
        center = np.stack([s, np.zeros_like(s)], axis=1)
        normal = np.tile([0.0, 1.0], (len(s), 1))
    else:
        center = np.stack([np.sin(kappa * s) / kappa, (1 - np.cos(kappa * s)) / kappa], axis=1)
        normal = np.stack([-np.sin(kappa * s), np.cos(kappa * s)], axis=1)
    center = center + normal * shift
    lanes = {}
    for k in range(n):
        off = (k - (n - 1) / 2.0) * w
        lanes[f"lane{k}"] = (center + normal * off, [])
    skeletons = [(center, n, True)]
    return lanes, skeletons


def _junction(spec: SyntheticSpec, rng):
    n, w = spec.lanes_per_road, spec.lane_width
    arms = _LAYOUT_ARMS[spec.layout]
    c = np.array([float(rng.uniform(-20.0, 20.0)), 0.0])
    h = n * w + 1.0
    lanes = {}
    in_end, out_start = {}, {}
    for arm in arms:
        u = np.array(_ARMS[arm])
        for k in range(n):
            d_in = -u
            off_in = _right(d_in) * (k + 0.5) * w
            a, b = c + u * ARM_LENGTH + off_in, c + u * h + off_in
            lanes[f"{arm}_in{k}"] = (_line(a, b), [])
            in_end[(arm, k)] = (b, d_in)
            off_out = _right(u) * (k + 0.5) * w
            a, b = c + u * h + off_out, c + u * ARM_LENGTH + off_out
            lanes[f"{arm}_out{k}"] = (_line(a, b), [])
            out_start[(arm, k)] = (a, u)

    for arm in arms:
        d = -np.array(_ARMS[arm])
        moves = []
        for target in arms:
            if target == arm:
                continue
            ut = np.array(_ARMS[target])
            if np.allclose(ut, d):
                moves.extend(("straight", k, k, target) for k in range(n))
            elif np.allclose(ut, _left(d)):
                moves.append(("left", 0, 0, target))
            elif np.allclose(ut, _right(d)):
                moves.append(("right", n - 1, n - 1, target))
        for kind, k_in, k_out, target in moves:
            p0, d0 = in_end[(arm, k_in)]
            p3, d3 = out_start[(target, k_out)]
            L = np.linalg.norm(p3 - p0) / 3.0
            geom = _bezier(p0, p0 + d0 * L, p3 - d3 * L, p3)
            name = f"{arm}_{kind}{k_in}_to_{target}"
            lanes[name] = (geom, [f"{target}_out{k_out}"])
            lanes[f"{arm}_in{k_in}"][1].append(name)

    skeletons = []
    ew = np.stack([np.linspace(-ARM_LENGTH, ARM_LENGTH, 61) + c[0], np.zeros(61)], axis=1)
    skeletons.append((ew, 2 * n, False))
    if "north" in arms:
        ns = np.stack([np.full(61, c[0]), np.linspace(-ARM_LENGTH, ARM_LENGTH, 61)], axis=1)
    else:
        ns = np.stack([np.full(31, c[0]), np.linspace(0.0, -ARM_LENGTH, 31)], axis=1)
    skeletons.append((ns, 2 * n, False))
    return lanes, skeletons


def _ego_to_enu(xy: np.ndarray, heading: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    return np.stack([xy[:, 0] * c - xy[:, 1] * s, xy[:, 0] * s + xy[:, 1] * c, np.zeros(len(xy))], axis=1)


def _to_px(xy: np.ndarray, shape: tuple[int, int], mpp: float) -> np.ndarray:
    h, w = shape
    # cv2 places pixel centers at integer coordinates
    col = w / 2.0 - xy[:, 1] / mpp - 0.5
    row = h / 2.0 - xy[:, 0] / mpp - 0.5
    return np.round(np.stack([col, row], axis=1) * 16).astype(np.int32)


def render_satellite(lanes_xy: list[np.ndarray], markings: list[np.ndarray], spec: SyntheticSpec, rng, extent: Extent):
    """Paint lane corridors over a flat background; returns (pixels, corridor_mask)."""
    shape = (round(extent.forward_m / RASTER_MPP), round(extent.lateral_m / RASTER_MPP))
    mask = np.zeros(shape, dtype=np.uint8)
    thickness = max(1, int(round(spec.lane_width / RASTER_MPP)))
    for xy in lanes_xy:
        cv2.polylines(mask, [_to_px(xy, shape, RASTER_MPP)], False, 1, thickness, cv2.LINE_8, 4)
    marks = np.zeros(shape, dtype=np.uint8)
    for xy in markings:
        cv2.polylines(marks, [_to_px(xy, shape, RASTER_MPP)], False, 1, 1, cv2.LINE_8, 4)
    marks &= mask

    background = np.array([72.0, 98.0, 62.0]) + rng.uniform(-12.0, 12.0, 3)
    img = np.empty(shape + (3,), dtype=np.float64)
    img[:] = background
    img[mask > 0] = ROAD_COLOR
    img[marks > 0] = MARK_COLOR
    if spec.texture_noise > 0:
        img += rng.normal(0.0, spec.texture_noise, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), mask


def synthetic_pose(seed: int, rng) -> GeoPose:
    lat = 40.0 + float(rng.uniform(0.0, 2.0))
    lon = -82.0 + float(rng.uniform(0.0, 1.0))
    return GeoPose(lat, lon, float(rng.uniform(-math.pi, math.pi)))


def generate_synthetic_scene(spec: SyntheticSpec, extent: Extent | None = None, n_points: int = N_POINTS) -> SceneBundle:
    """Build a complete, self-consistent scene bundle from ``spec``."""
    extent = extent or Extent()
    rng = np.random.default_rng([spec.seed, LAYOUTS.index(spec.layout)])
    pose = synthetic_pose(spec.seed, rng)
    road_class = ("primary", "secondary", "tertiary", "residential")[int(rng.integers(4))]

    if spec.layout in ("straight", "curve"):
        lanes, skeletons = _carriageway(spec, rng)
    else:
        lanes, skeletons = _junction(spec, rng)

    record = HDRecord(
        {lid: HDLane(_ego_to_enu(xy, pose.heading), succ) for lid, (xy, succ) in lanes.items()},
        (pose.lat, pose.lon),
    )
    graph = hdmap_to_lanegraph(record, pose, extent, n_points)

    polylines = []
    for xy, lane_count, two_way in skeletons:
        for piece in clip_polyline(xy, extent.half_x, extent.half_y):
            polylines.append(SDPolyline(piece, road_class, lane_count, not two_way))
    sd_map = SDMap(polylines, pose, extent)

    markings = []
    for lid, (xy, _) in lanes.items():
        if "_to_" in lid:
            continue
        seg = np.diff(xy, axis=0)
        normal = np.stack([-seg[:, 1], seg[:, 0]], axis=1)
        normal = np.concatenate([normal, normal[-1:]]) / np.maximum(
            np.linalg.norm(np.concatenate([normal, normal[-1:]]), axis=1, keepdims=True), 1e-12
        )
        for side in (-0.5, 0.5):
            markings.append(xy + normal * side * spec.lane_width)
    pixels, _ = render_satellite([xy for xy, _ in lanes.values()], markings, spec, rng, extent)
    satellite = SatelliteImage(pixels, (RASTER_MPP, RASTER_MPP), pose, extent)

    return SceneBundle(
        scene_id=f"syn-{spec.layout}-{spec.seed:06d}",
        pose=pose,
        sd_map=sd_map,
        satellite=satellite,
        gt_graph=graph,
        split_key=f"synthetic-region-{spec.seed % 4}",
    )


def spec_to_dict(spec: SyntheticSpec) -> dict:
    return asdict(spec)

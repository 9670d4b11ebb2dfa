"""Geospatial value types and the SD map JSON schema.

Ego frame convention used across the package: origin at the pose, +x along
the heading (travel direction), +y to the left, right-handed. Rasters are
stored "heading up": row 0 is the far-forward edge and column 0 is the
far-left edge.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError

MAX_MERCATOR_LAT = 85.0511

ROAD_CLASSES = (
    "motorway",
    "trunk",
    "primary",
    "secondary",
    "tertiary",
    "residential",
    "service",
    "other",
)
MAX_LANE_COUNT = 8
# one-hot road class + lane count + one-way flag
ATTRIBUTE_DIM = len(ROAD_CLASSES) + 2


def normalize_heading(heading: float) -> float:
    """Wrap an angle in radians to [-pi, pi)."""
    wrapped = math.fmod(heading + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class GeoPose:
    lat: float
    lon: float
    heading: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.lat, self.lon, self.heading)):
            raise InputError(f"non-finite pose {self.lat}, {self.lon}, {self.heading}")
        if abs(self.lat) > MAX_MERCATOR_LAT:
            raise InputError(f"latitude {self.lat} outside Web-Mercator range")
        lon = (self.lon + 180.0) % 360.0 - 180.0
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "heading", normalize_heading(self.heading))

    def to_dict(self) -> dict:
        return {"lat": self.lat, "lon": self.lon, "heading": self.heading}

    @classmethod
    def from_dict(cls, d: dict) -> "GeoPose":
        return cls(float(d["lat"]), float(d["lon"]), float(d.get("heading", 0.0)))


@dataclass(frozen=True)
class Extent:
    forward_m: float = 100.0
    lateral_m: float = 50.0

    def __post_init__(self):
        if not (self.forward_m > 0 and self.lateral_m > 0):
            raise InputError(f"extent must be positive, got {self.forward_m} x {self.lateral_m}")

    @property
    def half_x(self) -> float:
        return self.forward_m / 2.0

    @property
    def half_y(self) -> float:
        return self.lateral_m / 2.0

    def contains(self, x, y, tol: float = 1e-6):
        return (np.abs(x) <= self.half_x + tol) & (np.abs(y) <= self.half_y + tol)

    def to_dict(self) -> dict:
        return {"forward_m": self.forward_m, "lateral_m": self.lateral_m}

    @classmethod
    def from_dict(cls, d: dict) -> "Extent":
        return cls(float(d["forward_m"]), float(d["lateral_m"]))


@dataclass(frozen=True, order=True)
class TileIndex:
    zoom: int
    x: int
    y: int

    def __post_init__(self):
        n = 1 << self.zoom
        if self.zoom < 0 or not (0 <= self.x < n and 0 <= self.y < n):
            raise InputError(f"tile index out of range: {self}")

    def __str__(self) -> str:
        return f"{self.zoom}/{self.x}/{self.y}"


@dataclass
class SDPolyline:
    points: np.ndarray  # (n, 2) ego meters
    road_class: str = "other"
    lane_count: int = 0
    one_way: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(pts) < 2:
            raise InputError("SD polyline needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise InputError("SD polyline has non-finite coordinates")
        self.points = pts
        if self.road_class not in ROAD_CLASSES:
            self.road_class = "other"
        self.lane_count = int(self.lane_count)

    def attribute_vector(self) -> np.ndarray:
        """Fixed-width attribute row: class one-hot, lane count / 8, one-way flag."""
        vec = np.zeros(ATTRIBUTE_DIM, dtype=np.float32)
        vec[ROAD_CLASSES.index(self.road_class)] = 1.0
        vec[len(ROAD_CLASSES)] = min(max(self.lane_count, 0), MAX_LANE_COUNT) / MAX_LANE_COUNT
        vec[len(ROAD_CLASSES) + 1] = float(self.one_way)
        return vec

    def to_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "road_class": self.road_class,
            "lane_count": self.lane_count,
            "one_way": bool(self.one_way),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SDPolyline":
        return cls(
            np.asarray(d["points"], dtype=np.float64),
            d.get("road_class", "other"),
            int(d.get("lane_count", 0)),
            bool(d.get("one_way", False)),
        )


@dataclass
class SDMap:
    polylines: list[SDPolyline]
    pose: GeoPose
    extent: Extent = field(default_factory=Extent)

    def __len__(self) -> int:
        return len(self.polylines)

    def to_dict(self) -> dict:
        return {
            "pose": self.pose.to_dict(),
            "extent": self.extent.to_dict(),
            "polylines": [p.to_dict() for p in self.polylines],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "SDMap":
        return cls(
            [SDPolyline.from_dict(p) for p in d.get("polylines", [])],
            GeoPose.from_dict(d["pose"]),
            Extent.from_dict(d["extent"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "SDMap":
        return cls.from_dict(json.loads(text))


@dataclass
class SatelliteImage:
    pixels: np.ndarray  # (H, W, 3) uint8, heading up
    meters_per_pixel: tuple[float, float]
    pose: GeoPose
    extent: Extent = field(default_factory=Extent)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] == 0 or px.shape[1] == 0:
            raise InputError(f"satellite raster must be HxWx3, got {px.shape}")
        self.pixels = px.astype(np.uint8, copy=False)
        self.meters_per_pixel = (float(self.meters_per_pixel[0]), float(self.meters_per_pixel[1]))

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]

    def ego_to_pixel(self, x, y):
        """Continuous (row, col) of an ego point, pixel centers at integer + 0.5."""
        h, w = self.shape
        row = h / 2.0 - np.asarray(x) / self.meters_per_pixel[0]
        col = w / 2.0 - np.asarray(y) / self.meters_per_pixel[1]
        return row, col

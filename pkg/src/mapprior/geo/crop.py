"""Rotate-and-crop of stitched tile rasters into ego-centric satellite images."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from ..errors import CoverageError
from .tiles import TILE_SIZE, StitchedRaster, ground_resolution, wgs84_to_tile
from .types import Extent, GeoPose, SatelliteImage


def native_size(pose: GeoPose, extent: Extent, zoom: int) -> tuple[int, int]:
    mpp = ground_resolution(pose.lat, zoom)
    return max(1, round(extent.forward_m / mpp)), max(1, round(extent.lateral_m / mpp))


def ego_grid(extent: Extent, out_size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Ego (x, y) of every output pixel center, heading-up layout."""
    h, w = out_size
    rows = np.arange(h, dtype=np.float64) + 0.5
    cols = np.arange(w, dtype=np.float64) + 0.5
    x = extent.half_x - rows * (extent.forward_m / h)
    y = extent.half_y - cols * (extent.lateral_m / w)
    return np.meshgrid(x, y, indexing="ij")


def ego_to_stitched(stitched: StitchedRaster, pose: GeoPose, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Continuous (row, col) in ``stitched`` of ego points; pixel centers at k + 0.5."""
    zoom = stitched.zoom
    tx, ty = wgs84_to_tile(pose.lat, pose.lon, zoom)
    mpp = ground_resolution(pose.lat, zoom)
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    east = x * c - y * s
    north = x * s + y * c
    ox, oy = stitched.origin_px
    col = tx * TILE_SIZE - ox + east / mpp
    row = ty * TILE_SIZE - oy - north / mpp
    return row, col


def crop_satellite(
    stitched: StitchedRaster,
    pose: GeoPose,
    extent: Extent | None = None,
    out_size: tuple[int, int] | None = None,
) -> SatelliteImage:
    """Resample the stitched raster into an ego-centric, heading-up image.

    The ego sits at the image center and the heading points to decreasing
    row. ``out_size`` defaults to the native zoom resolution of the extent.
    """
    extent = extent or Extent()
    if out_size is None:
        out_size = native_size(pose, extent, stitched.zoom)
    h, w = out_size

    hx, hy = extent.half_x, extent.half_y
    corners = {
        "front-left": (hx, hy),
        "front-right": (hx, -hy),
        "rear-left": (-hx, hy),
        "rear-right": (-hx, -hy),
    }
    rows_max, cols_max = stitched.pixels.shape[:2]
    for name, (cx, cy) in corners.items():
        r, c = ego_to_stitched(stitched, pose, cx, cy)
        if not (0.0 <= r <= rows_max and 0.0 <= c <= cols_max):
            raise CoverageError(
                f"stitched raster does not cover the {name} corner (row {float(r):.1f}, col {float(c):.1f})",
                missing=name,
            )

    gx, gy = ego_grid(extent, out_size)
    r, c = ego_to_stitched(stitched, pose, gx, gy)
    # map_coordinates samples at integer pixel centers
    coords = np.stack([r - 0.5, c - 0.5])
    out = np.empty((h, w, 3), dtype=np.uint8)
    for ch in range(3):
        band = ndimage.map_coordinates(
            stitched.pixels[..., ch].astype(np.float64), coords, order=1, mode="nearest"
        )
        out[..., ch] = np.clip(np.rint(band), 0, 255).astype(np.uint8)
    return SatelliteImage(out, (extent.forward_m / h, extent.lateral_m / w), pose, extent)

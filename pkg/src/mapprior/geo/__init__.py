"""Geospatial ingestion: tile math, satellite crops and local SD maps."""

from .crop import crop_satellite, native_size
from .osm import clip_polyline, ego_to_latlon, extract_local_sd, latlon_to_ego, load_road_source
from .tiles import (
    StitchedRaster,
    TileCache,
    TileClient,
    TileRange,
    covering_range,
    fetch_tiles,
    ground_resolution,
    tile_to_wgs84,
    wgs84_to_tile,
)
from .types import (
    ATTRIBUTE_DIM,
    ROAD_CLASSES,
    Extent,
    GeoPose,
    SatelliteImage,
    SDMap,
    SDPolyline,
    TileIndex,
)

__all__ = [
    "ATTRIBUTE_DIM",
    "ROAD_CLASSES",
    "Extent",
    "GeoPose",
    "SatelliteImage",
    "SDMap",
    "SDPolyline",
    "StitchedRaster",
    "TileCache",
    "TileClient",
    "TileIndex",
    "TileRange",
    "clip_polyline",
    "covering_range",
    "crop_satellite",
    "ego_to_latlon",
    "extract_local_sd",
    "fetch_tiles",
    "ground_resolution",
    "latlon_to_ego",
    "load_road_source",
    "native_size",
    "tile_to_wgs84",
    "wgs84_to_tile",
]

"""Scene bundles, ground-truth lane graphs, synthetic scenes and persistence."""

from .hdmap import HDLane, HDRecord, hdmap_to_lanegraph
from .io import (
    filter_still_frames,
    list_scenes,
    load_bundle,
    load_dataset,
    save_bundle,
    split_by_key,
)
from .synthetic import LAYOUTS, SyntheticSpec, generate_synthetic_scene
from .types import N_POINTS, LaneGraph, SceneBundle

__all__ = [
    "HDLane",
    "HDRecord",
    "LAYOUTS",
    "LaneGraph",
    "N_POINTS",
    "SceneBundle",
    "SyntheticSpec",
    "filter_still_frames",
    "generate_synthetic_scene",
    "hdmap_to_lanegraph",
    "list_scenes",
    "load_bundle",
    "load_dataset",
    "save_bundle",
    "split_by_key",
]

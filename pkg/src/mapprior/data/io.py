"""Scene bundle persistence: ``{root}/{scene_id}/{sd_map.json, satellite.png, lane_graph.json, meta.json}``."""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import IntegrityError, SchemaVersionError
from ..geo.types import Extent, GeoPose, SatelliteImage, SDMap
from .types import LaneGraph, SceneBundle

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_FILES = {
    "sd_map": "sd_map.json",
    "satellite": "satellite.png",
    "lane_graph": "lane_graph.json",
    "meta": "meta.json",
}


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _png_bytes(pixels: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def save_bundle(bundle: SceneBundle, root) -> Path:
    out = Path(root) / bundle.scene_id
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / _FILES["sd_map"], bundle.sd_map.to_json())
    atomic_write_bytes(out / _FILES["satellite"], _png_bytes(bundle.satellite.pixels))
    if bundle.gt_graph is not None:
        atomic_write_text(out / _FILES["lane_graph"], bundle.gt_graph.to_json())
    meta = {
        "schema_version": SCHEMA_VERSION,
        "scene_id": bundle.scene_id,
        "pose": bundle.pose.to_dict(),
        "extent": bundle.extent.to_dict(),
        "split_key": bundle.split_key,
        "satellite": {"meters_per_pixel": list(bundle.satellite.meters_per_pixel)},
        "has_gt": bundle.gt_graph is not None,
    }
    atomic_write_text(out / _FILES["meta"], json.dumps(meta, indent=1))
    return out


def load_bundle(root, scene_id: str) -> SceneBundle:
    d = Path(root) / scene_id
    meta_path = d / _FILES["meta"]
    if not meta_path.is_file():
        raise IntegrityError(f"scene {scene_id}: missing meta", missing=["meta"])
    meta = json.loads(meta_path.read_text())
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"scene {scene_id}: schema version {meta.get('schema_version')} != {SCHEMA_VERSION}"
        )
    required = ["sd_map", "satellite"] + (["lane_graph"] if meta.get("has_gt", True) else [])
    missing = [name for name in required if not (d / _FILES[name]).is_file()]
    if missing:
        raise IntegrityError(f"scene {scene_id}: missing {', '.join(missing)} in {d}", missing=missing)

    pose = GeoPose.from_dict(meta["pose"])
    extent = Extent.from_dict(meta["extent"])
    sd_map = SDMap.from_json((d / _FILES["sd_map"]).read_text())
    with Image.open(d / _FILES["satellite"]) as im:
        pixels = np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    mpp = meta.get("satellite", {}).get("meters_per_pixel")
    if mpp is None:
        mpp = (extent.forward_m / pixels.shape[0], extent.lateral_m / pixels.shape[1])
    satellite = SatelliteImage(pixels, tuple(mpp), pose, extent)
    gt = None
    if meta.get("has_gt", True):
        gt = LaneGraph.from_json((d / _FILES["lane_graph"]).read_text())
    return SceneBundle(meta["scene_id"], pose, sd_map, satellite, gt, meta.get("split_key", ""))


def list_scenes(root) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(p.name for p in root.iterdir() if (p / _FILES["meta"]).is_file())


def load_dataset(root) -> list[SceneBundle]:
    return [load_bundle(root, sid) for sid in list_scenes(root)]


def read_meta(root, scene_id: str) -> dict:
    return json.loads((Path(root) / scene_id / _FILES["meta"]).read_text())


def split_by_key(scene_keys: dict[str, str], eval_keys) -> tuple[list[str], list[str]]:
    """Partition scene ids by split key: scenes whose key is in ``eval_keys`` go to eval.

    Keys are typically city/region names, giving geo-disjoint splits.
    """
    eval_keys = set(eval_keys)
    train = sorted(s for s, k in scene_keys.items() if k not in eval_keys)
    held = sorted(s for s, k in scene_keys.items() if k in eval_keys)
    return train, held


def filter_still_frames(poses: list[tuple[str, GeoPose]], min_displacement_m: float) -> list[str]:
    """Drop frames that moved less than ``min_displacement_m`` from the last kept frame.

    ``poses`` must be in temporal order. The first frame is always kept.
    """
    from ..geo.osm import latlon_to_ego

    kept: list[str] = []
    last = None
    for scene_id, pose in poses:
        if last is not None:
            x, y = latlon_to_ego(pose.lat, pose.lon, GeoPose(last.lat, last.lon, 0.0))
            if math.hypot(float(x), float(y)) < min_displacement_m:
                continue
        kept.append(scene_id)
        last = pose
    return kept

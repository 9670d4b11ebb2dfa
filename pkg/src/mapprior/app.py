"""End-to-end operations behind the command line: ingestion, inference, prior export, evaluation, rendering."""

from __future__ import annotations

import io
import json
import logging
import math
import subprocess
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .config import MetricConfig
from .data.hdmap import HDRecord, hdmap_to_lanegraph
from .data.io import atomic_write_bytes, atomic_write_text, load_dataset
from .data.types import LaneGraph, SceneBundle
from .errors import CoverageError, InputError
from .evaluation.report import EvalReport, evaluate_graphs, read_prediction_dump
from .geo.crop import crop_satellite
from .geo.osm import extract_local_sd
from .geo.tiles import TileClient, covering_range, fetch_tiles
from .geo.types import Extent, GeoPose
from .model.export import write_decoded, write_prior
from .model.model import MapPriorModel, assemble_graphs
from .training.trainer import load_checkpoint

logger = logging.getLogger(__name__)

PACKAGE_VERSION = "0.1.0"
MANIFEST_NAME = "manifest.json"
DEFAULT_ZOOM = 20


def version_string() -> str:
    """Package version, suffixed with the short commit of the source tree when available."""
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{PACKAGE_VERSION}+g{rev}" if rev else PACKAGE_VERSION


@dataclass
class RunManifest:
    """Provenance record written into every artifact directory.

    The manifest is written once before any heavy work and rewritten at the
    end with outputs and stage latencies. ``started_at`` and
    ``stage_seconds`` are the only wall-clock dependent fields.
    """

    command: str
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    seed: int | None = None
    flags: dict = field(default_factory=dict)
    version: str = field(default_factory=version_string)
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    stage_seconds: dict = field(default_factory=dict)
    status: str = "running"

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": self.seed,
            "flags": self.flags,
            "version": self.version,
            "started_at": self.started_at,
            "stage_seconds": self.stage_seconds,
            "status": self.status,
        }

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        atomic_write_text(path, json.dumps(self.to_dict(), indent=1, sort_keys=True, default=str))
        return path

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stage_seconds[name] = self.stage_seconds.get(name, 0.0) + time.perf_counter() - t0


def read_manifest(out_dir) -> dict:
    return json.loads((Path(out_dir) / MANIFEST_NAME).read_text())


@dataclass
class PoseSources:
    """Everything pose-mode ingestion needs besides the pose itself."""

    roads: object  # path or bytes of an OSM XML / road JSON extract
    client: TileClient
    zoom: int = DEFAULT_ZOOM
    hdmap: HDRecord | None = None
    out_size: tuple[int, int] | None = None


def ingest_pose(
    pose: GeoPose,
    sources: PoseSources,
    extent: Extent | None = None,
    scene_id: str | None = None,
    split_key: str = "",
) -> SceneBundle:
    """Fetch, stitch and crop imagery and extract the local SD map for one pose.

    Offline clients must find every covering tile in the cache; the first
    missing tile (row-major order) is named in the raised coverage error.
    Online, tiles the service does not have are filled and logged.
    """
    extent = extent or Extent()
    radius = math.hypot(extent.half_x, extent.half_y)
    tiles = covering_range(pose.lat, pose.lon, radius, sources.zoom)
    stitched = fetch_tiles(sources.client, tiles)
    if stitched.missing and sources.client.offline:
        first = stitched.missing[0]
        raise CoverageError(
            f"offline mode and tile {first} is not cached ({len(stitched.missing)} of {len(list(tiles))} tiles missing)",
            missing=stitched.missing,
        )
    satellite = crop_satellite(stitched, pose, extent, sources.out_size)
    sd_map = extract_local_sd(sources.roads, pose, extent)
    gt = hdmap_to_lanegraph(sources.hdmap, pose, extent) if sources.hdmap is not None else None
    if scene_id is None:
        scene_id = f"pose-{pose.lat:.7f}-{pose.lon:.7f}-{pose.heading:.4f}"
    return SceneBundle(scene_id, pose, sd_map, satellite, gt, split_key)


def read_pose_list(path) -> list[dict]:
    """JSON list of ``{"lat", "lon", "heading" (radians), optional "scene_id", "split_key"}``."""
    try:
        items = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read pose list {path}: {exc}") from exc
    if not isinstance(items, list):
        raise InputError(f"pose list {path} must be a JSON array")
    out = []
    for i, item in enumerate(items):
        try:
            pose = GeoPose.from_dict(item)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"pose list {path} entry {i}: {exc!r}") from exc
        out.append({"pose": pose, "scene_id": item.get("scene_id"), "split_key": item.get("split_key", "")})
    return out


def load_model(checkpoint) -> tuple[MapPriorModel, dict]:
    model, payload = load_checkpoint(checkpoint)
    return model, payload


def _model_extent(model: MapPriorModel) -> Extent:
    return Extent(*model.cfg.extent)


def run_inference(
    checkpoint,
    out_dir,
    bundle: SceneBundle | None = None,
    pose: GeoPose | None = None,
    sources: PoseSources | None = None,
    dump_raw: bool = False,
    manifest: RunManifest | None = None,
) -> tuple[LaneGraph, RunManifest]:
    """Single-scene inference into ``{out_dir}/{scene_id}/lane_graph.json``.

    Either a ready ``bundle`` or a ``pose`` with ``sources`` must be given.
    """
    if (bundle is None) == (pose is None):
        raise InputError("give exactly one of a scene bundle or a pose")
    if pose is not None and sources is None:
        raise InputError("pose mode needs road and tile sources")
    out_dir = Path(out_dir)
    manifest = manifest or RunManifest("infer")
    manifest.inputs.setdefault("checkpoint", str(checkpoint))
    if pose is not None:
        manifest.inputs.setdefault("pose", pose.to_dict())
    else:
        manifest.inputs.setdefault("scene_id", bundle.scene_id)
    manifest.write(out_dir)

    model, payload = load_model(checkpoint)
    manifest.config = {"model": payload["model_config"], "config_hash": payload["config_hash"]}
    with manifest.stage("ingest"):
        if bundle is None:
            bundle = ingest_pose(pose, sources, _model_extent(model))
    with manifest.stage("encode"):
        prior = model.prior_grids([bundle])[0]
    with manifest.stage("decode"):
        decoded = model.decode_prior(prior)
        graph = assemble_graphs(decoded, model.cfg.decoder.confidence_threshold, model.cfg.decoder.edge_threshold)[0]

    scene_dir = out_dir / bundle.scene_id
    atomic_write_text(scene_dir / "lane_graph.json", graph.to_json())
    manifest.outputs.append(str(scene_dir / "lane_graph.json"))
    if dump_raw:
        write_decoded(decoded.logits[0].numpy(), decoded.points[0].numpy(), decoded.topo_logits[0].numpy(), scene_dir / "decoded.smdl")
        manifest.outputs.append(str(scene_dir / "decoded.smdl"))
    manifest.status = "ok"
    manifest.write(out_dir)
    return graph, manifest


def export_prior(
    checkpoint,
    out_dir,
    bundles: list[SceneBundle] | None = None,
    poses: list[dict] | None = None,
    sources: PoseSources | None = None,
    manifest: RunManifest | None = None,
) -> tuple[list[Path], RunManifest]:
    """Write one ``{scene_id}.smpg`` (plus JSON sidecar) per scene or pose.

    Pose lists are processed as a stream, one ingestion and one encode at a
    time, so long routes can be precomputed without holding them in memory.
    """
    if (bundles is None) == (poses is None):
        raise InputError("give exactly one of scene bundles or a pose list")
    if poses is not None and sources is None:
        raise InputError("pose mode needs road and tile sources")
    out_dir = Path(out_dir)
    manifest = manifest or RunManifest("export-prior")
    manifest.inputs.setdefault("checkpoint", str(checkpoint))
    manifest.inputs.setdefault("count", len(bundles) if bundles is not None else len(poses))
    manifest.write(out_dir)

    model, payload = load_model(checkpoint)
    manifest.config = {"model": payload["model_config"], "config_hash": payload["config_hash"]}
    extent = _model_extent(model)

    def items():
        if bundles is not None:
            yield from bundles
            return
        for item in poses:
            with manifest.stage("ingest"):
                b = ingest_pose(item["pose"], sources, extent, item.get("scene_id"), item.get("split_key", ""))
            yield b

    paths = []
    for b in items():
        with manifest.stage("encode"):
            prior = model.prior_grids([b])[0]
        path = write_prior(prior, out_dir / f"{b.scene_id}.smpg")
        paths.append(path)
        manifest.outputs.append(str(path))
    manifest.status = "ok"
    manifest.write(out_dir)
    return paths, manifest


def predict_dataset(model: MapPriorModel, bundles: list[SceneBundle], batch_size: int = 4) -> list[LaneGraph]:
    out: list[LaneGraph] = []
    for i in range(0, len(bundles), batch_size):
        out.extend(model.predict(bundles[i : i + batch_size]))
    return out


def evaluate_dataset(
    dataset,
    checkpoint=None,
    predictions=None,
    cfg: MetricConfig | None = None,
    out_dir=None,
    det_t: float | None = None,
    top_lt: float | None = None,
) -> EvalReport:
    """Score a checkpoint or a prediction dump against a dataset's ground truth.

    ``dataset`` is a directory or a list of bundles; ``predictions`` is a
    directory of ``{scene_id}/lane_graph.json`` files. With ``out_dir`` the
    report is written as ``report.json`` and ``per_scene.csv``.
    """
    if (checkpoint is None) == (predictions is None):
        raise InputError("give exactly one of a checkpoint or a prediction dump")
    bundles = load_dataset(dataset) if isinstance(dataset, (str, Path)) else list(dataset)
    if not bundles:
        raise InputError(f"no scenes found in {dataset}")
    no_gt = [b.scene_id for b in bundles if b.gt_graph is None]
    if no_gt:
        raise InputError(f"scenes without ground truth: {', '.join(no_gt[:5])}")
    ids = [b.scene_id for b in bundles]
    if checkpoint is not None:
        model, _ = load_model(checkpoint)
        preds = predict_dataset(model, bundles)
    else:
        preds = read_prediction_dump(predictions, ids)
    report = evaluate_graphs(preds, [b.gt_graph for b in bundles], cfg, ids, det_t, top_lt)
    if out_dir is not None:
        report.write(Path(out_dir) / "report.json", Path(out_dir) / "per_scene.csv")
    return report


# RGB colors; predicted lane i takes PALETTE[i % len(PALETTE)]
PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 212),
)
SD_COLOR = (255, 255, 255)
GT_COLOR = (0, 255, 0)
EDGE_COLOR = (255, 0, 255)
GT_EDGE_COLOR = (0, 160, 0)


def render_pixel(bundle: SceneBundle, x, y, scale: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Integer (col, row) in the rendered image of ego points."""
    row, col = bundle.satellite.ego_to_pixel(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    return np.floor(col * scale).astype(np.int64), np.floor(row * scale).astype(np.int64)


def _polyline_px(bundle, pts, scale):
    c, r = render_pixel(bundle, pts[:, 0], pts[:, 1], scale)
    return np.stack([c, r], axis=1).astype(np.int32)


def _draw_graph(img, bundle, graph: LaneGraph, scale, colors, edge_color, thickness):
    for i in range(graph.n_lanes):
        px = _polyline_px(bundle, graph.points[i], scale)
        cv2.polylines(img, [px], False, colors(i), thickness, cv2.LINE_8)
        cv2.arrowedLine(img, tuple(int(v) for v in px[-2]), tuple(int(v) for v in px[-1]), colors(i), thickness, cv2.LINE_8, 0, 0.6)
    for i, j in zip(*np.nonzero(graph.adjacency)):
        a = _polyline_px(bundle, graph.points[i][-1:], scale)[0]
        b = _polyline_px(bundle, graph.points[j][:1], scale)[0]
        cv2.line(img, (int(a[0]), int(a[1])), (int(b[0]), int(b[1])), edge_color, thickness, cv2.LINE_8)


def render_scene(bundle: SceneBundle, prediction: LaneGraph | None = None, out_image=None, scale: int = 2) -> np.ndarray:
    """Satellite underlay with SD roads, ground truth and an optional prediction.

    Predicted lanes take a fixed color by lane index; successor edges are drawn
    as connectors from the end of one lane to the start of the next. Output is
    an RGB array, also written as PNG when ``out_image`` is given.
    """
    sat = bundle.satellite.pixels
    img = cv2.resize(sat, (sat.shape[1] * scale, sat.shape[0] * scale), interpolation=cv2.INTER_NEAREST)
    img = np.ascontiguousarray(img)
    for pl in bundle.sd_map.polylines:
        cv2.polylines(img, [_polyline_px(bundle, np.asarray(pl.points), scale)], False, SD_COLOR, 1, cv2.LINE_8)
    if bundle.gt_graph is not None:
        _draw_graph(img, bundle, bundle.gt_graph, scale, lambda i: GT_COLOR, GT_EDGE_COLOR, 1)
    if prediction is not None:
        _draw_graph(img, bundle, prediction, scale, lambda i: PALETTE[i % len(PALETTE)], EDGE_COLOR, 2)

    legend = [("SD road", SD_COLOR)]
    if bundle.gt_graph is not None:
        legend.append(("ground truth", GT_COLOR))
    if prediction is not None:
        legend += [("prediction", PALETTE[0]), ("predicted edge", EDGE_COLOR)]
    h = img.shape[0]
    top = h - 8 - 16 * len(legend)
    cv2.rectangle(img, (4, top - 4), (150, h - 4), (0, 0, 0), -1)
    for k, (label, color) in enumerate(legend):
        y = top + 12 + 16 * k
        cv2.line(img, (10, y - 4), (30, y - 4), color, 2)
        cv2.putText(img, label, (36, y), cv2.FONT_HERSHEY_SIMPLEX, 0.4, (255, 255, 255), 1, cv2.LINE_8)

    if out_image is not None:
        buf = io.BytesIO()
        Image.fromarray(img, mode="RGB").save(buf, format="PNG")
        atomic_write_bytes(out_image, buf.getvalue())
    return img


def manifest_for(command: str, args_dict: dict, config: dict, seed) -> RunManifest:
    return RunManifest(command, config=config, seed=seed, flags={k: v for k, v in args_dict.items() if k != "func"})


"""Command-line entry point: ``mapprior <command> [options]``.

Exit codes: 0 on success, 2 for bad input (missing files, malformed data,
coverage or version mismatches), 3 for runtime failures (fetch, decode or
training errors).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import app
from .config import (
    MetricConfig,
    as_dict,
    load_config,
    model_config_from_dict,
    tiny_model_config,
    train_config_from_dict,
)
from .data.hdmap import HDRecord
from .data.io import atomic_write_text, filter_still_frames, list_scenes, load_bundle, read_meta, save_bundle, split_by_key
from .data.synthetic import LAYOUTS, SyntheticSpec, generate_synthetic_scene
from .data.types import LaneGraph
from .errors import InputError, RuntimeFailure
from .geo.tiles import TileClient
from .geo.types import Extent, GeoPose
from .training.trainer import train

logger = logging.getLogger("mapprior")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config with model/train/metrics/tiles/synthetic sections")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1, help="per-scene parallelism for prepare/synth/eval")
    parser.add_argument("--offline", action="store_true", help="never touch the network; tiles must be cached")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")


def _tile_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--roads", type=Path, help="OSM XML or road JSON extract covering the poses")
    parser.add_argument("--hdmap", type=Path, help="optional HD record JSON for ground truth")
    parser.add_argument("--tile-cache", type=Path, help="tile cache directory")
    parser.add_argument("--tile-url", help="tile service base URL; token from MAPPRIOR_TILE_TOKEN")
    parser.add_argument("--zoom", type=int, default=app.DEFAULT_ZOOM)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mapprior", description="SD-map and satellite prior lane-graph toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scene bundles")
    _common(p)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--layouts", default=",".join(LAYOUTS), help="comma-separated layouts, cycled over scenes")
    p.add_argument("--lanes-per-road", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="ingest real poses into scene bundles")
    _common(p)
    _tile_flags(p)
    p.add_argument("--poses", type=Path, required=True, help="JSON list of poses in temporal order")
    p.add_argument("--min-displacement", type=float, default=0.0, help="drop frames closer than this to the last kept one (m)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("split", help="geo-disjoint train/eval split by split key")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--eval-keys", required=True, help="comma-separated split keys held out for evaluation")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", type=Path, help="split.json; trains on its 'train' list")
    p.add_argument("--tiny", action="store_true", help="start from the desk-scale model configuration")
    p.add_argument("--steps", type=int, help="override train.max_steps")
    p.add_argument("--resume", type=Path, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or prediction dump")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", type=Path)
    src.add_argument("--predictions", type=Path, help="directory of {scene_id}/lane_graph.json")
    p.add_argument("--split", type=Path, help="split.json; evaluates its 'eval' list")
    p.add_argument("--det-t", type=float, help="traffic-element detection score, enables OLS")
    p.add_argument("--top-lt", type=float, help="lane-to-element topology score, enables OLS")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict a lane graph for one scene or pose")
    _common(p)
    _tile_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, help="dataset directory holding --scene-id")
    p.add_argument("--scene-id")
    p.add_argument("--pose", help="lat,lon,heading_radians")
    p.add_argument("--dump-raw", action="store_true", help="also write the raw decoder outputs")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("export-prior", help="write fused prior grids for scenes or a pose list")
    _common(p)
    _tile_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, help="dataset directory")
    p.add_argument("--scene-id", action="append", help="restrict to these scenes (repeatable)")
    p.add_argument("--poses", type=Path, help="JSON pose list, processed as a stream")
    p.set_defaults(func=cmd_export_prior)

    p = sub.add_parser("render", help="plot a scene with optional prediction")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--scene-id", required=True)
    p.add_argument("--prediction", type=Path, help="lane_graph.json to overlay")
    p.add_argument("--scale", type=int, default=2)
    p.set_defaults(func=cmd_render)
    return parser


def _flags(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}


def _manifest(args, config: dict) -> app.RunManifest:
    return app.RunManifest(args.command, config=config, seed=args.seed, flags=_flags(args))


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _sources(args, cfg: dict) -> app.PoseSources:
    if args.roads is None:
        raise InputError("pose mode needs --roads")
    tiles = dict(cfg.get("tiles", {}))
    if args.tile_cache is not None:
        tiles["cache_dir"] = str(args.tile_cache)
    if args.tile_url is not None:
        tiles["base_url"] = args.tile_url
    client = TileClient.from_config(tiles, offline=args.offline)
    hd = None
    if args.hdmap is not None:
        if not args.hdmap.is_file():
            raise InputError(f"HD record not found: {args.hdmap}")
        hd = HDRecord.from_json(args.hdmap.read_text())
    if not args.roads.is_file():
        raise InputError(f"road source not found: {args.roads}")
    return app.PoseSources(args.roads, client, args.zoom, hd)


def _scene_subset(data: Path, split: Path | None, key: str) -> list[str]:
    ids = list_scenes(data)
    if not ids:
        raise InputError(f"no scenes found in {data}")
    if split is None:
        return ids
    try:
        chosen = json.loads(split.read_text())[key]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"cannot read '{key}' list from split file {split}: {exc!r}") from exc
    missing = sorted(set(chosen) - set(ids))
    if missing:
        raise InputError(f"split file {split} names scenes absent from {data}: {', '.join(missing[:5])}")
    return [s for s in ids if s in set(chosen)]


def cmd_synth(args, cfg: dict) -> None:
    layouts = [s.strip() for s in args.layouts.split(",") if s.strip()]
    base = dict(cfg.get("synthetic", {}))
    if args.lanes_per_road is not None:
        base["lanes_per_road"] = args.lanes_per_road
    specs = [SyntheticSpec(seed=args.seed + i, layout=layouts[i % len(layouts)], **base) for i in range(args.count)]
    manifest = _manifest(args, {"synthetic": base, "layouts": layouts})
    manifest.write(args.out)

    def one(spec):
        bundle = generate_synthetic_scene(spec)
        save_bundle(bundle, args.out)
        return bundle.scene_id

    with manifest.stage("generate"):
        manifest.outputs = _map(one, specs, args.workers)
    manifest.status = "ok"
    manifest.write(args.out)
    print(f"wrote {len(specs)} scenes to {args.out}")


def cmd_prepare(args, cfg: dict) -> None:
    sources = _sources(args, cfg)
    items = app.read_pose_list(args.poses)
    for i, item in enumerate(items):
        if item["scene_id"] is None:
            item["scene_id"] = f"frame-{i:06d}"
    if args.min_displacement > 0:
        keep = set(filter_still_frames([(it["scene_id"], it["pose"]) for it in items], args.min_displacement))
        items = [it for it in items if it["scene_id"] in keep]
    manifest = _manifest(args, {"tiles": cfg.get("tiles", {})})
    manifest.inputs = {"poses": str(args.poses), "roads": str(args.roads), "hdmap": str(args.hdmap) if args.hdmap else None}
    manifest.write(args.out)
    extent = Extent(*model_config_from_dict(cfg.get("model")).extent)

    def one(item):
        bundle = app.ingest_pose(item["pose"], sources, extent, item["scene_id"], item["split_key"])
        save_bundle(bundle, args.out)
        return bundle.scene_id

    with manifest.stage("ingest"):
        manifest.outputs = _map(one, items, args.workers)
    manifest.status = "ok"
    manifest.write(args.out)
    print(f"wrote {len(items)} scenes to {args.out}")


def cmd_split(args, cfg: dict) -> None:
    ids = list_scenes(args.data)
    if not ids:
        raise InputError(f"no scenes found in {args.data}")
    manifest = _manifest(args, {})
    manifest.write(args.out)
    keys = {s: read_meta(args.data, s).get("split_key", "") for s in ids}
    train_ids, eval_ids = split_by_key(keys, [k.strip() for k in args.eval_keys.split(",") if k.strip()])
    path = args.out / "split.json"
    atomic_write_text(path, json.dumps({"train": train_ids, "eval": eval_ids}, indent=1))
    manifest.outputs = [str(path)]
    manifest.status = "ok"
    manifest.write(args.out)
    print(f"train {len(train_ids)} / eval {len(eval_ids)} scenes -> {path}")


def _model_config(args, cfg: dict):
    if getattr(args, "tiny", False):
        base = as_dict(tiny_model_config())
        for section, values in (cfg.get("model") or {}).items():
            if isinstance(values, dict) and isinstance(base.get(section), dict):
                base[section].update(values)
            else:
                base[section] = values
        return model_config_from_dict(base)
    return model_config_from_dict(cfg.get("model"))


def cmd_train(args, cfg: dict) -> None:
    mcfg = _model_config(args, cfg)
    tdict = dict(cfg.get("train") or {})
    tdict["seed"] = args.seed
    if args.steps is not None:
        tdict["max_steps"] = args.steps
    tcfg = train_config_from_dict(tdict)
    ids = _scene_subset(args.data, args.split, "train")
    manifest = _manifest(args, {"model": as_dict(mcfg), "train": as_dict(tcfg)})
    manifest.inputs = {"data": str(args.data), "scenes": len(ids), "resume": str(args.resume) if args.resume else None}
    manifest.write(args.out)
    with manifest.stage("load"):
        bundles = [load_bundle(args.data, s) for s in ids]
    metric_cfg = MetricConfig(**cfg["metrics"]) if cfg.get("metrics") else MetricConfig()

    def eval_fn(model, held):
        from .evaluation.metrics import det_l, top_ll

        preds = app.predict_dataset(model, held)
        gts = [b.gt_graph for b in held]
        return {"det_l": det_l(preds, gts, metric_cfg), "top_ll": top_ll(preds, gts, metric_cfg)}

    with manifest.stage("train"):
        result = train(bundles, mcfg, tcfg, args.out, args.resume, eval_fn)
    manifest.outputs = [str(result.checkpoint), str(args.out / "metrics.jsonl")]
    manifest.status = "ok"
    manifest.write(args.out)
    last = result.log[-1] if result.log else {}
    print(f"checkpoint {result.checkpoint}; final loss {last.get('total', float('nan')):.4f}")


def cmd_eval(args, cfg: dict) -> None:
    metric_cfg = MetricConfig(**cfg["metrics"]) if cfg.get("metrics") else MetricConfig()
    ids = _scene_subset(args.data, args.split, "eval")
    manifest = _manifest(args, {"metrics": as_dict(metric_cfg)})
    manifest.inputs = {"data": str(args.data), "checkpoint": str(args.checkpoint) if args.checkpoint else None,
                       "predictions": str(args.predictions) if args.predictions else None}
    manifest.write(args.out)
    with manifest.stage("load"):
        bundles = _map(lambda s: load_bundle(args.data, s), ids, args.workers)
    with manifest.stage("evaluate"):
        report = app.evaluate_dataset(bundles, args.checkpoint, args.predictions, metric_cfg, args.out, args.det_t, args.top_lt)
    manifest.outputs = [str(args.out / "report.json"), str(args.out / "per_scene.csv")]
    manifest.status = "ok"
    manifest.write(args.out)
    line = f"DET_l {report.det_l:.2f}  TOP_ll {report.top_ll:.2f}"
    if report.ols is not None:
        line += f"  OLS {report.ols:.2f}"
    print(line)


def _parse_pose(text: str) -> GeoPose:
    try:
        lat, lon, heading = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise InputError(f"--pose must be lat,lon,heading_radians, got {text!r}") from exc
    return GeoPose(lat, lon, heading)


def cmd_infer(args, cfg: dict) -> None:
    manifest = _manifest(args, {})
    if args.pose is not None:
        if args.scene_id is not None:
            raise InputError("give either --pose or --scene-id, not both")
        graph, _ = app.run_inference(args.checkpoint, args.out, pose=_parse_pose(args.pose), sources=_sources(args, cfg),
                                     dump_raw=args.dump_raw, manifest=manifest)
    else:
        if args.data is None or args.scene_id is None:
            raise InputError("scene mode needs --data and --scene-id")
        bundle = load_bundle(args.data, args.scene_id)
        graph, _ = app.run_inference(args.checkpoint, args.out, bundle=bundle, dump_raw=args.dump_raw, manifest=manifest)
    print(f"{graph.n_lanes} lanes, {int(graph.adjacency.sum())} edges -> {args.out}")


def cmd_export_prior(args, cfg: dict) -> None:
    manifest = _manifest(args, {})
    if args.poses is not None:
        if args.data is not None:
            raise InputError("give either --poses or --data, not both")
        paths, _ = app.export_prior(args.checkpoint, args.out, poses=app.read_pose_list(args.poses),
                                    sources=_sources(args, cfg), manifest=manifest)
    else:
        if args.data is None:
            raise InputError("export-prior needs --data or --poses")
        ids = args.scene_id or list_scenes(args.data)
        if not ids:
            raise InputError(f"no scenes found in {args.data}")
        bundles = [load_bundle(args.data, s) for s in ids]
        paths, _ = app.export_prior(args.checkpoint, args.out, bundles=bundles, manifest=manifest)
    print(f"wrote {len(paths)} prior grids to {args.out}")


def cmd_render(args, cfg: dict) -> None:
    manifest = _manifest(args, {})
    manifest.inputs = {"data": str(args.data), "scene_id": args.scene_id,
                       "prediction": str(args.prediction) if args.prediction else None}
    manifest.write(args.out)
    bundle = load_bundle(args.data, args.scene_id)
    pred = None
    if args.prediction is not None:
        if not args.prediction.is_file():
            raise InputError(f"prediction not found: {args.prediction}")
        pred = LaneGraph.from_json(args.prediction.read_text())
    path = args.out / f"{args.scene_id}.png"
    with manifest.stage("render"):
        app.render_scene(bundle, pred, path, args.scale)
    manifest.outputs = [str(path)]
    manifest.status = "ok"
    manifest.write(args.out)
    print(f"rendered {path}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Optimization loop with checkpointing and a JSONL metrics log."""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..config import ModelConfig, TrainConfig, as_dict, config_hash, model_config_from_dict, train_config_from_dict
from ..data.io import atomic_write_bytes
from ..data.types import SceneBundle
from ..errors import ConfigMismatchError, InputError, SchemaVersionError, TrainingError
from ..model.decoder import DecodedLanes
from ..model.model import MapPriorModel
from .losses import LossReport, compute_losses, normalize_gt_points
from .matcher import match

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class PreparedScene:
    inputs: tuple
    gt_points_norm: np.ndarray
    gt_adjacency: np.ndarray
    scene_id: str


def prepare_scenes(model: MapPriorModel, bundles: list[SceneBundle]) -> list[PreparedScene]:
    out = []
    for b in bundles:
        if b.gt_graph is None:
            raise InputError(f"scene {b.scene_id} has no ground truth")
        inputs = tuple(t[0] for t in model.inputs([b]))
        gt = normalize_gt_points(b.gt_graph, model.cfg.extent, model.cfg.decoder.z_range)
        out.append(PreparedScene(inputs, gt, b.gt_graph.adjacency.copy(), b.scene_id))
    return out


def _collate(scenes: list[PreparedScene]):
    return tuple(torch.stack([s.inputs[k] for s in scenes]) for k in range(4))


def batch_losses(decoded: DecodedLanes, scenes: list[PreparedScene], mcfg: ModelConfig, tcfg: TrainConfig, step=None) -> LossReport:
    """Match and average losses over scenes and (with deep supervision) decoder layers."""
    layers = ([*decoded.aux, decoded] if mcfg.decoder.deep_supervision else [decoded])
    reports = []
    for out in layers:
        for b, scene in enumerate(scenes):
            m = match(
                out.logits[b].detach().double().numpy(),
                out.points_norm[b].detach().double().numpy(),
                scene.gt_points_norm,
                tcfg.w_cls,
                tcfg.w_reg,
            )
            reports.append(
                compute_losses(
                    out.logits[b],
                    out.points_norm[b],
                    out.topo_logits[b],
                    scene.gt_points_norm,
                    scene.gt_adjacency,
                    m,
                    tcfg.w_cls,
                    tcfg.w_reg,
                    tcfg.w_top,
                    tcfg.focal_alpha,
                    tcfg.focal_gamma,
                    tcfg.unmatched_topology_negative,
                    batch_id=f"step {step} scene {scene.scene_id}",
                )
            )
    k = len(reports)
    cls = sum(r.cls for r in reports) / k
    reg = sum(r.reg for r in reports) / k
    top = sum(r.top for r in reports) / k
    total = tcfg.w_cls * cls + tcfg.w_reg * reg + tcfg.w_top * top
    return LossReport(cls, reg, top, total, (tcfg.w_cls, tcfg.w_reg, tcfg.w_top))


def epoch_order(n: int, seed: int, epoch: int) -> list[int]:
    return np.random.default_rng([seed, epoch]).permutation(n).tolist()


def cosine_lr(step: int, total_steps: int, base_lr: float, min_ratio: float = 0.0) -> float:
    """Learning rate for update ``step`` (0-based) of ``total_steps``."""
    if total_steps <= 1:
        return base_lr
    t = min(step, total_steps - 1) / (total_steps - 1)
    return base_lr * (min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + math.cos(math.pi * t)))


def save_checkpoint(path, model: MapPriorModel, optimizer, tcfg: TrainConfig, step: int, extra: dict | None = None) -> Path:
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": as_dict(model.cfg),
        "train_config": as_dict(tcfg),
        "config_hash": config_hash(model.cfg, tcfg),
        "step": step,
        "params": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "extra": extra or {},
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    atomic_write_bytes(path, buf.getvalue())
    return Path(path)


def load_checkpoint(path, expect_hash: str | None = None):
    """Returns ``(model, payload)``; refuses other schema versions and config hashes."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError as exc:
        raise InputError(f"checkpoint not found: {path}") from exc
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        got = payload.get("version") if isinstance(payload, dict) else None
        raise SchemaVersionError(f"{path}: checkpoint version {got} != {CHECKPOINT_VERSION}")
    if expect_hash is not None and payload["config_hash"] != expect_hash:
        raise ConfigMismatchError(
            f"{path}: config hash {payload['config_hash']} does not match current config {expect_hash}"
        )
    model = MapPriorModel(model_config_from_dict(payload["model_config"]))
    model.load_state_dict(payload["params"])
    model.eval()
    return model, payload


@dataclass
class TrainResult:
    model: MapPriorModel
    checkpoint: Path | None
    log: list[dict] = field(default_factory=list)
    eval_log: list[dict] = field(default_factory=list)


def _held_out(n: int, tcfg: TrainConfig) -> tuple[list[int], list[int]]:
    k = int(math.floor(n * tcfg.eval_fraction)) if n > 1 else 0
    order = np.random.default_rng([tcfg.seed, 7919]).permutation(n).tolist()
    return sorted(order[k:]), sorted(order[:k])


def train(
    bundles: list[SceneBundle],
    model_cfg: ModelConfig,
    tcfg: TrainConfig,
    out_dir=None,
    resume=None,
    eval_fn=None,
) -> TrainResult:
    """Train from scratch (or resume) on ``bundles``.

    ``eval_fn(model, bundles) -> dict`` is called on the held-out slice at the
    end of every epoch when the slice is non-empty.
    """
    if not bundles:
        raise InputError("training needs at least one scene")
    model_cfg.validate()
    tcfg.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(tcfg.seed)
    model = MapPriorModel(model_cfg)
    optimizer = torch.optim.AdamW(model.parameters(), lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    start_step = 0
    if resume is not None:
        _, payload = load_checkpoint(resume, expect_hash=config_hash(model_cfg, tcfg))
        model.load_state_dict(payload["params"])
        optimizer.load_state_dict(payload["optimizer"])
        start_step = int(payload["step"])

    train_idx, eval_idx = _held_out(len(bundles), tcfg)
    scenes = prepare_scenes(model, [bundles[i] for i in train_idx])
    eval_bundles = [bundles[i] for i in eval_idx]
    steps_per_epoch = math.ceil(len(scenes) / tcfg.batch_size)
    total_steps = tcfg.epochs * steps_per_epoch
    if tcfg.max_steps is not None:
        total_steps = min(total_steps, tcfg.max_steps) if tcfg.max_steps > 0 else 0

    log_path = out / "metrics.jsonl" if out is not None else None
    log: list[dict] = []
    if log_path is not None and resume is not None and log_path.exists():
        for line in log_path.read_text().splitlines():
            rec = json.loads(line)
            if rec["step"] <= start_step:
                log.append(rec)
    if log_path is not None:
        log_path.write_text("".join(json.dumps(r) + "\n" for r in log))
    eval_log: list[dict] = []

    last_good = Path(resume) if resume is not None else None
    if out is not None and last_good is None:
        last_good = save_checkpoint(out / "last.pt", model, optimizer, tcfg, 0)

    model.train()
    step = start_step
    while step < total_steps:
        epoch, pos = divmod(step, steps_per_epoch)
        order = epoch_order(len(scenes), tcfg.seed, epoch)
        batch_ids = order[pos * tcfg.batch_size : (pos + 1) * tcfg.batch_size]
        batch = [scenes[i] for i in batch_ids]
        lr = cosine_lr(step, total_steps, tcfg.lr, tcfg.min_lr_ratio)
        for group in optimizer.param_groups:
            group["lr"] = lr

        decoded = model(*_collate(batch))
        try:
            report = batch_losses(decoded, batch, model_cfg, tcfg, step + 1)
        except TrainingError:
            logger.error("aborting at step %d; last good checkpoint %s", step + 1, last_good)
            raise
        if not torch.isfinite(report.total):
            raise TrainingError(f"loss became {float(report.total.detach())} at step {step + 1}; last good checkpoint {last_good}")
        optimizer.zero_grad(set_to_none=True)
        report.total.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), tcfg.grad_clip)
        optimizer.step()
        step += 1

        rec = {"step": step, **report.as_floats(), "lr": lr}
        log.append(rec)
        if log_path is not None and (step % tcfg.log_every == 0 or step == total_steps):
            with log_path.open("a") as f:
                f.write(json.dumps(rec) + "\n")
        if out is not None and (step % tcfg.checkpoint_every == 0 or step == total_steps):
            last_good = save_checkpoint(out / "last.pt", model, optimizer, tcfg, step)
        if step % steps_per_epoch == 0 and eval_bundles and eval_fn is not None:
            model.eval()
            metrics = eval_fn(model, eval_bundles)
            model.train()
            eval_rec = {"epoch": step // steps_per_epoch, "step": step, **metrics}
            eval_log.append(eval_rec)
            if out is not None:
                with (out / "eval_log.jsonl").open("a") as f:
                    f.write(json.dumps(eval_rec) + "\n")

    model.eval()
    return TrainResult(model, last_good, log, eval_log)


def configs_from_checkpoint(payload: dict) -> tuple[ModelConfig, TrainConfig]:
    return model_config_from_dict(payload["model_config"]), train_config_from_dict(payload["train_config"])

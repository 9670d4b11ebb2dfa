"""Model, training and metric configuration.

Every field is settable from a JSON config file (see :func:`load_config`)
and overridable from the command line.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError


@dataclass
class EncoderConfig:
    channels: int = 256
    max_polylines: int = 64
    points_per_polyline: int = 11
    embed_dims: int = 32  # sinusoidal dims per point (x and y share them)
    freq_base: float = 10000.0
    encoder_layers: int = 6
    heads: int = 8
    ffn_dim: int = 512
    backbone_widths: tuple = (32, 64, 128, 256)  # four stages, strides 4/8/16/32
    image_size: tuple = (500, 250)  # (rows along heading, cols lateral)
    bev_size: tuple = (200, 100)  # (H_B, W_B)
    bev_pos_embed: str = "learned"  # or "sinusoidal"
    attn_chunk: int = 2048

    def validate(self) -> None:
        for name in ("channels", "max_polylines", "points_per_polyline", "embed_dims", "encoder_layers", "heads", "ffn_dim"):
            if getattr(self, name) <= 0:
                raise InputError(f"encoder.{name} must be positive")
        if self.embed_dims % 4:
            raise InputError("encoder.embed_dims must be divisible by 4 (sin/cos pairs for x and y)")
        if self.channels % self.heads or self.channels % 4:
            raise InputError("encoder.channels must be divisible by encoder.heads and by 4")
        if len(self.backbone_widths) != 4:
            raise InputError("encoder.backbone_widths needs four stage widths")
        if self.bev_pos_embed not in ("learned", "sinusoidal"):
            raise InputError("encoder.bev_pos_embed must be 'learned' or 'sinusoidal'")


@dataclass
class DecoderConfig:
    num_queries: int = 200
    layers: int = 6
    heads: int = 8
    sampling_points: int = 4
    gcn_layers: int = 1
    ffn_dim: int = 512
    n_points: int = 11
    z_range: tuple = (-10.0, 10.0)
    topo_classifier_layers: int = 2
    confidence_threshold: float = 0.3
    edge_threshold: float = 0.5
    deep_supervision: bool = True

    def validate(self, channels: int) -> None:
        for name in ("num_queries", "layers", "heads", "sampling_points", "ffn_dim", "n_points", "topo_classifier_layers"):
            if getattr(self, name) <= 0:
                raise InputError(f"decoder.{name} must be positive")
        if self.gcn_layers < 0:
            raise InputError("decoder.gcn_layers must be >= 0")
        if channels % self.heads or channels % 2:
            raise InputError("channels must be divisible by decoder.heads and by 2")
        for name in ("confidence_threshold", "edge_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise InputError(f"decoder.{name} must be in (0, 1)")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    extent: tuple = (100.0, 50.0)

    def validate(self) -> "ModelConfig":
        self.encoder.validate()
        self.decoder.validate(self.encoder.channels)
        return self


@dataclass
class TrainConfig:
    epochs: int = 8
    max_steps: int | None = None
    batch_size: int = 1
    lr: float = 1e-4
    min_lr_ratio: float = 0.0
    weight_decay: float = 1e-2
    w_cls: float = 1.5
    w_reg: float = 2.5
    w_top: float = 5.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    grad_clip: float = 35.0
    unmatched_topology_negative: bool = True
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 1
    eval_fraction: float = 0.1

    def validate(self) -> "TrainConfig":
        for name in ("epochs", "batch_size", "grad_clip", "focal_gamma"):
            if getattr(self, name) <= 0:
                raise InputError(f"train.{name} must be positive")
        for name in ("lr", "weight_decay", "w_cls", "w_reg", "w_top"):
            if getattr(self, name) < 0:
                raise InputError(f"train.{name} must be non-negative")
        if not 0.0 < self.focal_alpha < 1.0:
            raise InputError("train.focal_alpha must be in (0, 1)")
        return self


@dataclass
class MetricConfig:
    frechet_thresholds: tuple = (1.0, 2.0, 3.0)
    topology_gate: float = 1.5

    def __post_init__(self):
        th = tuple(float(t) for t in self.frechet_thresholds)
        if not th or any(t <= 0 for t in th) or list(th) != sorted(th):
            raise InputError("frechet_thresholds must be positive and ascending")
        self.frechet_thresholds = th


def _as_dict(obj) -> dict:
    d = dataclasses.asdict(obj)
    return json.loads(json.dumps(d))


def _update(obj, values: dict, prefix: str):
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, val in values.items():
        if key not in names:
            raise InputError(f"unknown config key {prefix}{key}")
        cur = getattr(obj, key)
        if dataclasses.is_dataclass(cur):
            _update(cur, val, f"{prefix}{key}.")
        elif isinstance(cur, tuple):
            setattr(obj, key, tuple(val))
        else:
            setattr(obj, key, val)


def model_config_from_dict(d: dict | None) -> ModelConfig:
    cfg = ModelConfig()
    _update(cfg, d or {}, "model.")
    return cfg.validate()


def train_config_from_dict(d: dict | None) -> TrainConfig:
    cfg = TrainConfig()
    _update(cfg, d or {}, "train.")
    return cfg.validate()


def load_config(path) -> dict:
    """Read a JSON config with optional ``model``, ``train``, ``metrics`` and ``tiles`` sections."""
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc


def config_hash(*configs) -> str:
    payload = json.dumps([_as_dict(c) for c in configs], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def tiny_model_config() -> ModelConfig:
    """Desk-scale configuration used by the learnability and determinism checks."""
    return ModelConfig(
        EncoderConfig(
            channels=64,
            encoder_layers=2,
            heads=4,
            ffn_dim=128,
            backbone_widths=(16, 32, 64, 64),
            image_size=(160, 80),
            bev_size=(50, 25),
        ),
        DecoderConfig(num_queries=50, layers=2, heads=4, sampling_points=4, ffn_dim=128),
    ).validate()


as_dict = _as_dict

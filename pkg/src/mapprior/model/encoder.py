"""SD + satellite prior encoder producing the fused BEV prior grid."""

from __future__ import annotations

import logging
import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..config import EncoderConfig
from ..errors import InputError
from ..geo.types import ATTRIBUTE_DIM, SatelliteImage, SDMap
from ..polyline import resample_polyline
from .layers import CrossAttentionBlock, EncoderLayer, sinusoidal_embed, sinusoidal_grid_embed

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


def sd_to_arrays(sd_map: SDMap, cfg: EncoderConfig):
    """Resample, pad and mask the SD polylines.

    Returns ``(points (m', N, 2) ego meters, attrs (m', k), mask (m',) bool)``.
    When the map holds more than ``m'`` polylines the ones farthest from the
    ego are dropped.
    """
    m_pad, n = cfg.max_polylines, cfg.points_per_polyline
    polys = list(sd_map.polylines)
    for p in polys:
        if not np.all(np.isfinite(p.points)):
            raise InputError("SD map contains non-finite coordinates")
    if len(polys) > m_pad:
        dist = [float(np.min(np.linalg.norm(p.points, axis=1))) for p in polys]
        order = sorted(range(len(polys)), key=lambda i: (dist[i], i))[:m_pad]
        logger.warning("SD map has %d polylines, keeping the %d nearest", len(polys), m_pad)
        polys = [polys[i] for i in sorted(order)]
    points = np.zeros((m_pad, n, 2), dtype=np.float64)
    attrs = np.zeros((m_pad, ATTRIBUTE_DIM), dtype=np.float32)
    mask = np.zeros(m_pad, dtype=bool)
    for i, p in enumerate(polys):
        points[i] = resample_polyline(p.points, n)
        attrs[i] = p.attribute_vector()
        mask[i] = True
    return points, attrs, mask


def normalize_xy(points, extent) -> np.ndarray:
    """Map ego meters to [0, 1] over the extent (x forward, y left)."""
    fwd, lat = extent
    pts = np.asarray(points, dtype=np.float64)
    out = np.empty_like(pts)
    out[..., 0] = (pts[..., 0] + fwd / 2.0) / fwd
    out[..., 1] = (pts[..., 1] + lat / 2.0) / lat
    return out


def embed_polylines(points_norm: torch.Tensor, d: int, base: float) -> torch.Tensor:
    """(B, m', N, 2) coordinates in [0, 1] to (B, m', N*d) sinusoidal features.

    Each coordinate gets d/2 dims so a point packs to d.
    """
    emb = sinusoidal_embed(points_norm * TWO_PI, d // 2, base)
    return emb.flatten(-3)


def resize_image(pixels: np.ndarray, size: tuple) -> torch.Tensor:
    """uint8 (H, W, 3) to float (3, h, w) in [-0.5, 0.5], bilinear resize."""
    arr = np.asarray(pixels)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InputError(f"satellite raster must have 3 channels, got shape {arr.shape}")
    t = torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1).to(torch.float32) / 255.0 - 0.5
    if tuple(t.shape[1:]) != tuple(size):
        t = F.interpolate(t[None], size=tuple(size), mode="bilinear", align_corners=False)[0]
    return t


class SDEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        in_dim = cfg.points_per_polyline * cfg.embed_dims + ATTRIBUTE_DIM
        self.input_proj = nn.Linear(in_dim, cfg.channels)
        self.layers = nn.ModuleList(
            EncoderLayer(cfg.channels, cfg.heads, cfg.ffn_dim) for _ in range(cfg.encoder_layers)
        )
        self.norm = nn.LayerNorm(cfg.channels)

    def forward(self, points_norm, attrs, mask):
        """points_norm (B, m', N, 2), attrs (B, m', k), mask (B, m') bool -> (B, m', C)."""
        feats = torch.cat([embed_polylines(points_norm, self.cfg.embed_dims, self.cfg.freq_base), attrs], -1)
        valid = mask.to(feats.dtype)[..., None]
        x = self.input_proj(feats) * valid
        pad = ~mask
        # a fully padded map would softmax over nothing; let it see its own zero rows
        empty = pad.all(dim=1)
        if empty.any():
            pad = pad.clone()
            pad[empty] = False
        for layer in self.layers:
            x = layer(x, pad)
        return self.norm(x) * valid


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, padding_mode="replicate")
        self.norm1 = nn.GroupNorm(min(8, cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, padding_mode="replicate")
        self.norm2 = nn.GroupNorm(min(8, cout), cout)
        self.skip = None
        if stride != 1 or cin != cout:
            self.skip = nn.Conv2d(cin, cout, 1, stride)

    def forward(self, x):
        h = F.gelu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return F.gelu(h + (x if self.skip is None else self.skip(x)))


class SatelliteBackbone(nn.Module):
    """Four residual stages at strides 4/8/16/32; returns the last three, coarse first."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        w = cfg.backbone_widths
        self.stem = nn.Sequential(
            nn.Conv2d(3, w[0], 3, 2, 1, padding_mode="replicate"),
            nn.GroupNorm(min(8, w[0]), w[0]),
            nn.GELU(),
            nn.Conv2d(w[0], w[0], 3, 2, 1, padding_mode="replicate"),
            nn.GroupNorm(min(8, w[0]), w[0]),
            nn.GELU(),
        )
        self.stages = nn.ModuleList(
            [ResBlock(w[0], w[0], 1), ResBlock(w[0], w[1], 2), ResBlock(w[1], w[2], 2), ResBlock(w[2], w[3], 2)]
        )
        self.proj = nn.ModuleList(nn.Conv2d(c, cfg.channels, 1) for c in w[1:])
        self.level_embed = nn.Parameter(torch.zeros(3, cfg.channels))
        nn.init.normal_(self.level_embed, std=0.02)
        self.channels = cfg.channels

    def forward(self, image):
        """image (B, 3, H, W) -> (features (B, sum H_f W_f, C), pos (same), level_shapes)."""
        x = self.stem(image)
        outs = []
        for stage in self.stages:
            x = stage(x)
            outs.append(x)
        levels = []
        for lvl, (feat, proj) in enumerate(zip(outs[1:], self.proj)):
            levels.append((lvl, proj(feat)))
        levels.reverse()  # coarse -> fine
        flat, pos, shapes = [], [], []
        for rank, (lvl, f) in enumerate(levels):
            b, c, h, w = f.shape
            shapes.append((h, w))
            flat.append(f.flatten(2).transpose(1, 2) + self.level_embed[rank])
            pos.append(sinusoidal_grid_embed(h, w, c, dtype=f.dtype).to(f.device).expand(b, -1, -1))
        return torch.cat(flat, 1), torch.cat(pos, 1), shapes


class BEVFusion(nn.Module):
    """Learned BEV grid, cross-attended to SD features and then to satellite features."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        hb, wb = cfg.bev_size
        c = cfg.channels
        self.bev_embed = nn.Parameter(torch.zeros(hb * wb, c))
        nn.init.normal_(self.bev_embed, std=0.02)
        if cfg.bev_pos_embed == "learned":
            self.row_embed = nn.Parameter(torch.zeros(hb, c))
            self.col_embed = nn.Parameter(torch.zeros(wb, c))
            nn.init.normal_(self.row_embed, std=0.5)
            nn.init.normal_(self.col_embed, std=0.5)
        else:
            self.register_buffer("fixed_pos", sinusoidal_grid_embed(hb, wb, c), persistent=False)
        self.sd_block = CrossAttentionBlock(c, cfg.heads, cfg.ffn_dim, cfg.attn_chunk)
        self.sat_block = CrossAttentionBlock(c, cfg.heads, cfg.ffn_dim, cfg.attn_chunk)
        self.norm = nn.LayerNorm(c)

    def positional(self):
        if self.cfg.bev_pos_embed == "learned":
            hb, wb = self.cfg.bev_size
            return (self.row_embed[:, None, :] + self.col_embed[None, :, :]).reshape(hb * wb, -1)
        return self.fixed_pos.to(self.bev_embed.dtype)

    def initial_grid(self, batch: int):
        return (self.bev_embed + self.positional())[None].expand(batch, -1, -1)

    def forward(self, sd_feat, sd_mask, sat_feat, sat_pos):
        """Returns ``(B_prior (B, H_B*W_B, C), sd_skipped (B,) bool)``."""
        bsz = sd_feat.shape[0]
        bev = self.initial_grid(bsz)
        skipped = ~sd_mask.any(dim=1)
        if not skipped.all():
            pad = ~sd_mask
            pad = pad.clone()
            pad[skipped] = False  # placeholder key, result discarded below
            fused = self.sd_block(bev, sd_feat, pad)
            bev = torch.where(skipped[:, None, None], bev, fused)
        bev = self.sat_block(bev, sat_feat, None, sat_pos)
        return self.norm(bev), skipped


class PriorEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.sd = SDEncoder(cfg)
        self.backbone = SatelliteBackbone(cfg)
        self.fusion = BEVFusion(cfg)

    def forward(self, points_norm, attrs, mask, image):
        sd_feat = self.sd(points_norm, attrs, mask)
        sat_feat, sat_pos, _ = self.backbone(image)
        return self.fusion(sd_feat, mask, sat_feat, sat_pos)


def encoder_inputs(sd_maps: list[SDMap], images: list[SatelliteImage], cfg: EncoderConfig, extent, dtype=torch.float32):
    """Batch SD maps and satellite images into encoder tensors."""
    pts, attrs, masks, imgs = [], [], [], []
    for sd, img in zip(sd_maps, images):
        p, a, m = sd_to_arrays(sd, cfg)
        pts.append(normalize_xy(p, extent))
        attrs.append(a)
        masks.append(m)
        imgs.append(resize_image(img.pixels, cfg.image_size))
    return (
        torch.as_tensor(np.stack(pts), dtype=dtype),
        torch.as_tensor(np.stack(attrs), dtype=dtype),
        torch.as_tensor(np.stack(masks)),
        torch.stack(imgs).to(dtype),
    )

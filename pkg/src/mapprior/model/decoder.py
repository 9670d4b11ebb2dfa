"""Query-based lane decoding: deformable attention over the prior grid, GCN refinement, heads."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from ..config import DecoderConfig
from .layers import MLP, FeedForward, MultiHeadAttention

POINT_MARGIN = 0.25  # headroom of the point sigmoid beyond each window edge, in window fractions


def inverse_sigmoid(x, eps: float = 1e-5):
    x = x.clamp(0.0, 1.0)
    return torch.log(x.clamp(min=eps) / (1.0 - x).clamp(min=eps))


def bilinear_sample(grid, points):
    """Sample ``grid`` (B, C, H, W) at normalized ego points (B, Q, P, 2) -> (B, C, Q, P).

    Point (nx, ny) in [0, 1]^2 is (forward, left) over the window; row 0 of
    the grid is the forward edge and column 0 the left edge, cell centers at
    (k + 0.5) / size. Outside the grid the border value is repeated.
    """
    gx = 2.0 * (1.0 - points[..., 1]) - 1.0  # column
    gy = 2.0 * (1.0 - points[..., 0]) - 1.0  # row
    return F.grid_sample(grid, torch.stack([gx, gy], -1), mode="bilinear", padding_mode="border", align_corners=False)


class DeformableAttention(nn.Module):
    """Single-level deformable cross-attention over the BEV prior grid."""

    def __init__(self, dim: int, heads: int, points: int, grid_size: tuple):
        super().__init__()
        self.dim, self.heads, self.points = dim, heads, points
        self.grid_size = grid_size
        self.value_proj = nn.Linear(dim, dim)
        self.offsets = nn.Linear(dim, heads * points * 2)
        self.weights = nn.Linear(dim, heads * points)
        self.out_proj = nn.Linear(dim, dim)
        self.reset_parameters()

    def reset_parameters(self):
        nn.init.zeros_(self.offsets.weight)
        # initial sampling pattern: one ring of radius k cells per point, rotated per head
        angles = torch.arange(self.heads, dtype=torch.float32) * (2.0 * math.pi / self.heads)
        ring = torch.stack([angles.cos(), angles.sin()], -1)[:, None, :]
        radius = torch.arange(1, self.points + 1, dtype=torch.float32)[None, :, None]
        with torch.no_grad():
            self.offsets.bias.copy_((ring * radius).reshape(-1))
        nn.init.zeros_(self.weights.weight)
        nn.init.zeros_(self.weights.bias)

    def sample(self, value_grid, query, reference):
        """Per-head weighted samples before the output projection: (B, Q, C)."""
        b, q, _ = query.shape
        hb, wb = self.grid_size
        off = self.offsets(query).view(b, q, self.heads, self.points, 2)
        # offsets are in cells: (forward, left) -> normalized by grid rows/cols
        scale = torch.tensor([1.0 / hb, 1.0 / wb], dtype=off.dtype, device=off.device)
        loc = reference[:, :, None, None, :] + off * scale
        attn = torch.softmax(self.weights(query).view(b, q, self.heads, self.points), -1)
        head_dim = self.dim // self.heads
        v = value_grid.view(b, hb, wb, self.heads, head_dim).permute(0, 3, 4, 1, 2)
        v = v.reshape(b * self.heads, head_dim, hb, wb)
        loc = loc.permute(0, 2, 1, 3, 4).reshape(b * self.heads, q, self.points, 2)
        sampled = bilinear_sample(v, loc)  # (B*h, hd, Q, P)
        w = attn.permute(0, 2, 1, 3).reshape(b * self.heads, 1, q, self.points)
        out = (sampled * w).sum(-1)  # (B*h, hd, Q)
        return out.view(b, self.heads, head_dim, q).permute(0, 3, 1, 2).reshape(b, q, self.dim)

    def forward(self, query, bev, reference):
        """query (B, Q, C); bev (B, H*W, C); reference (B, Q, 2) normalized ego."""
        return self.out_proj(self.sample(self.value_proj(bev), query, reference))


class GCNStep(nn.Module):
    """Q <- LayerNorm(Q + A Q W) with A = row-normalized(sigmoid(topology logits) + I)."""

    def __init__(self, dim: int):
        super().__init__()
        self.linear = nn.Linear(dim, dim)
        self.norm = nn.LayerNorm(dim)

    @staticmethod
    def adjacency(topo_logits):
        n = topo_logits.shape[-1]
        a = torch.sigmoid(topo_logits) + torch.eye(n, dtype=topo_logits.dtype, device=topo_logits.device)
        return a / a.sum(-1, keepdim=True)

    def forward(self, q, topo_logits):
        return self.norm(q + torch.matmul(self.adjacency(topo_logits), self.linear(q)))


class LaneHeads(nn.Module):
    """Classification, point regression and pairwise topology heads."""

    def __init__(self, dim: int, cfg: DecoderConfig):
        super().__init__()
        self.n_points = cfg.n_points
        self.cls = MLP(dim, dim, 1, 3)
        self.reg = MLP(dim, dim, cfg.n_points * 3, 3)
        self.topo_src = MLP(dim, dim, dim // 2, 2)
        self.topo_dst = MLP(dim, dim, dim // 2, 2)
        self.topo_cls = MLP(dim, dim, 1, cfg.topo_classifier_layers)
        # focal-loss style prior: start with low lane and edge probabilities
        nn.init.constant_(self.cls.layers[-1].bias, -2.0)
        nn.init.constant_(self.topo_cls.layers[-1].bias, -4.6)

    @staticmethod
    def pair_features(src, dst):
        """Theta[i, j] = concat(src[i], dst[j]) -> (B, N, N, C)."""
        n = src.shape[1]
        a = src[:, :, None, :].expand(-1, -1, n, -1)
        b = dst[:, None, :, :].expand(-1, n, -1, -1)
        return torch.cat([a, b], -1)

    def topology(self, q):
        theta = self.pair_features(self.topo_src(q), self.topo_dst(q))
        return self.topo_cls(theta).squeeze(-1)

    def forward(self, q, reference):
        b, n, _ = q.shape
        logits = self.cls(q).squeeze(-1)
        raw = self.reg(q).view(b, n, self.n_points, 3)
        # The sigmoid spans [-m, 1 + m] so lanes clipped at the window edge
        # (normalized 0 or 1) sit away from saturation; a straight-through
        # clamp keeps outputs in [0, 1] without blocking the gradient.
        m = POINT_MARGIN
        anchor = inverse_sigmoid((reference + m) / (1.0 + 2.0 * m))
        xy = (1.0 + 2.0 * m) * torch.sigmoid(raw[..., :2] + anchor[:, :, None, :]) - m
        xy = xy + (xy.clamp(0.0, 1.0) - xy).detach()
        z = torch.sigmoid(raw[..., 2:])
        return logits, torch.cat([xy, z], -1), self.topology(q)


@dataclass
class DecodedLanes:
    """Raw decoder outputs for a batch.

    ``points_norm`` lives in [0, 1]^3 (forward, left, up over the window and
    z band); ``points`` is the same in ego meters.
    """

    logits: torch.Tensor  # (B, N_L)
    points_norm: torch.Tensor  # (B, N_L, N_P, 3)
    points: torch.Tensor  # (B, N_L, N_P, 3)
    topo_logits: torch.Tensor  # (B, N_L, N_L)
    aux: list = field(default_factory=list)  # earlier layers, same fields
    clamped_references: int = 0


def denormalize_points(points_norm, extent, z_range):
    fwd, lat = extent
    z0, z1 = z_range
    x = points_norm[..., 0] * fwd - fwd / 2.0
    y = points_norm[..., 1] * lat - lat / 2.0
    z = points_norm[..., 2] * (z1 - z0) + z0
    return torch.stack([x, y, z], -1)


class DecoderLayer(nn.Module):
    def __init__(self, dim: int, cfg: DecoderConfig, grid_size: tuple):
        super().__init__()
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, cfg.heads)
        self.norm_cross = nn.LayerNorm(dim)
        self.cross_attn = DeformableAttention(dim, cfg.heads, cfg.sampling_points, grid_size)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, cfg.ffn_dim)
        self.gcn = nn.ModuleList(GCNStep(dim) for _ in range(cfg.gcn_layers))
        self.ref_delta = nn.Linear(dim, 2)
        nn.init.zeros_(self.ref_delta.weight)
        nn.init.zeros_(self.ref_delta.bias)

    def forward(self, q, bev, reference, heads: LaneHeads):
        h = self.norm_self(q)
        q = q + self.self_attn(h, h, h)
        q = q + self.cross_attn(self.norm_cross(q), bev, reference)
        q = q + self.ffn(self.norm_ffn(q))
        for step in self.gcn:
            q = step(q, heads.topology(q))
        return q


class LaneDecoder(nn.Module):
    def __init__(self, dim: int, cfg: DecoderConfig, grid_size: tuple, extent: tuple):
        super().__init__()
        self.cfg = cfg
        self.extent = extent
        self.query_embed = nn.Parameter(torch.zeros(cfg.num_queries, dim))
        nn.init.normal_(self.query_embed, std=1.0)
        self.reference_logits = nn.Parameter(torch.zeros(cfg.num_queries, 2))
        nn.init.uniform_(self.reference_logits, -2.0, 2.0)
        self.layers = nn.ModuleList(DecoderLayer(dim, cfg, grid_size) for _ in range(cfg.layers))
        self.heads = LaneHeads(dim, cfg)

    def initial_queries(self, batch: int):
        q = self.query_embed[None].expand(batch, -1, -1)
        ref = torch.sigmoid(self.reference_logits)[None].expand(batch, -1, -1)
        return q, ref

    def forward(self, bev, queries=None, reference=None) -> DecodedLanes:
        """bev (B, H_B*W_B, C) -> DecodedLanes of the last layer with earlier layers in ``aux``."""
        if queries is None:
            queries, reference = self.initial_queries(bev.shape[0])
        outputs = []
        clamped = 0
        q, ref = queries, reference
        for layer in self.layers:
            q = layer(q, bev, ref, self.heads)
            logits, pts, topo = self.heads(q, ref)
            outputs.append((logits, pts, topo))
            new_ref = ref + layer.ref_delta(q)
            out_of_range = (new_ref < 0.0) | (new_ref > 1.0)
            clamped += int(out_of_range.any(-1).sum())
            ref = new_ref.clamp(0.0, 1.0).detach()
        decoded = [
            DecodedLanes(lg, pn, denormalize_points(pn, self.extent, self.cfg.z_range), tp)
            for lg, pn, tp in outputs
        ]
        last = decoded[-1]
        last.aux = decoded[:-1]
        last.clamped_references = clamped
        return last

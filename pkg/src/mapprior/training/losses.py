from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..data.types import LaneGraph
from ..errors import TrainingError
from .matcher import MatchResult


@dataclass
class LossReport:
    cls: torch.Tensor
    reg: torch.Tensor
    top: torch.Tensor
    total: torch.Tensor
    weights: tuple[float, float, float]

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("cls", "reg", "top", "total")}


def focal_loss(logits, targets, alpha: float = 0.25, gamma: float = 2.0):
    """Elementwise binary focal loss, unreduced."""
    p = torch.sigmoid(logits)
    ce = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    p_t = p * targets + (1 - p) * (1 - targets)
    alpha_t = alpha * targets + (1 - alpha) * (1 - targets)
    return alpha_t * (1 - p_t) ** gamma * ce


def normalize_gt_points(gt: LaneGraph, extent, z_range) -> np.ndarray:
    fwd, lat = extent
    z0, z1 = z_range
    pts = gt.points
    out = np.empty_like(pts)
    out[..., 0] = (pts[..., 0] + fwd / 2.0) / fwd
    out[..., 1] = (pts[..., 1] + lat / 2.0) / lat
    out[..., 2] = (pts[..., 2] - z0) / (z1 - z0)
    return out


def compute_losses(
    logits,
    points_norm,
    topo_logits,
    gt_points_norm,
    gt_adjacency,
    match: MatchResult,
    w_cls: float = 1.5,
    w_reg: float = 2.5,
    w_top: float = 5.0,
    alpha: float = 0.25,
    gamma: float = 2.0,
    unmatched_topology_negative: bool = True,
    batch_id=None,
) -> LossReport:
    """Losses for one scene.

    logits (N_L,), points_norm (N_L, N_P, 3), topo_logits (N_L, N_L);
    ground truth as normalized points (N_gt, N_P, 3) and adjacency (N_gt, N_gt).
    """
    for name, t in (("logits", logits), ("points", points_norm), ("topology", topo_logits)):
        if not torch.isfinite(t).all():
            raise TrainingError(f"non-finite {name} in batch {batch_id}")
    n = logits.shape[0]
    pi = torch.as_tensor(match.pred_indices, dtype=torch.long)
    gi = torch.as_tensor(match.gt_indices, dtype=torch.long)
    n_pos = max(1, len(match.pairs))

    cls_target = torch.zeros_like(logits)
    cls_target[pi] = 1.0
    l_cls = focal_loss(logits, cls_target, alpha, gamma).sum() / n_pos

    if len(match.pairs):
        gt_pts = torch.as_tensor(np.asarray(gt_points_norm), dtype=points_norm.dtype)[gi]
        l_reg = (points_norm[pi] - gt_pts).abs().mean(dim=(1, 2)).sum() / n_pos
    else:
        l_reg = points_norm.sum() * 0.0

    topo_target = torch.zeros_like(topo_logits)
    weight = torch.ones_like(topo_logits)
    if len(match.pairs):
        adj = torch.as_tensor(np.asarray(gt_adjacency), dtype=topo_logits.dtype)
        topo_target[pi[:, None], pi[None, :]] = adj[gi[:, None], gi[None, :]]
    if not unmatched_topology_negative:
        weight.zero_()
        if len(match.pairs):
            weight[pi[:, None], pi[None, :]] = 1.0
    edge_pos = max(1.0, float(topo_target.sum()))
    l_top = (focal_loss(topo_logits, topo_target, alpha, gamma) * weight).sum() / edge_pos

    total = w_cls * l_cls + w_reg * l_reg + w_top * l_top
    return LossReport(l_cls, l_reg, l_top, total, (w_cls, w_reg, w_top))

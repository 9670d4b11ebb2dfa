from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..config import ModelConfig
from ..data.types import LaneGraph, SceneBundle
from ..errors import InputError
from ..geo.types import Extent, GeoPose
from .decoder import DecodedLanes, LaneDecoder
from .encoder import PriorEncoder, encoder_inputs


@dataclass
class PriorGrid:
    """Fused BEV prior, (H_B, W_B, C) float32 in the heading-up grid layout."""

    grid: np.ndarray
    pose: GeoPose
    extent: Extent
    sd_skipped: bool = False

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float32)
        if self.grid.ndim != 3:
            raise InputError(f"prior grid must be (H, W, C), got {self.grid.shape}")


class MapPriorModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = PriorEncoder(cfg.encoder)
        self.decoder = LaneDecoder(cfg.encoder.channels, cfg.decoder, tuple(cfg.encoder.bev_size), tuple(cfg.extent))

    @property
    def dtype(self):
        return self.decoder.query_embed.dtype

    def inputs(self, bundles: list[SceneBundle]):
        return encoder_inputs(
            [b.sd_map for b in bundles], [b.satellite for b in bundles], self.cfg.encoder, self.cfg.extent, self.dtype
        )

    def encode(self, points_norm, attrs, mask, image):
        return self.encoder(points_norm, attrs, mask, image)

    def decode(self, bev) -> DecodedLanes:
        return self.decoder(bev)

    def forward(self, points_norm, attrs, mask, image) -> DecodedLanes:
        bev, _ = self.encode(points_norm, attrs, mask, image)
        return self.decode(bev)

    def forward_bundles(self, bundles: list[SceneBundle]) -> DecodedLanes:
        return self(*self.inputs(bundles))

    @torch.no_grad()
    def prior_grids(self, bundles: list[SceneBundle]) -> list[PriorGrid]:
        bev, skipped = self.encode(*self.inputs(bundles))
        hb, wb = self.cfg.encoder.bev_size
        out = []
        for b, grid, sk in zip(bundles, bev, skipped):
            arr = grid.reshape(hb, wb, -1).to(torch.float32).cpu().numpy()
            out.append(PriorGrid(arr, b.pose, b.extent, bool(sk)))
        return out

    @torch.no_grad()
    def decode_prior(self, prior: PriorGrid) -> DecodedLanes:
        bev = torch.as_tensor(prior.grid, dtype=self.dtype).reshape(1, -1, prior.grid.shape[-1])
        return self.decode(bev)

    @torch.no_grad()
    def predict(self, bundles: list[SceneBundle]) -> list[LaneGraph]:
        decoded = self.forward_bundles(bundles)
        return assemble_graphs(decoded, self.cfg.decoder.confidence_threshold, self.cfg.decoder.edge_threshold)


def assemble_graph(logits, points, topo_logits, confidence_threshold: float = 0.3, edge_threshold: float = 0.5) -> LaneGraph:
    """Keep confident lanes and the confident edges among them.

    Arrays are for one scene: logits (N_L,), points (N_L, N_P, 3) meters,
    topo_logits (N_L, N_L). Diagonal edges are always suppressed.
    """
    logits = np.asarray(logits, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    topo = np.asarray(topo_logits, dtype=np.float64)
    conf = 1.0 / (1.0 + np.exp(-logits))
    edge = 1.0 / (1.0 + np.exp(-topo))
    keep = np.flatnonzero(conf >= confidence_threshold)
    sub = edge[np.ix_(keep, keep)]
    adj = (sub >= edge_threshold).astype(np.uint8)
    np.fill_diagonal(adj, 0)
    if len(keep) == 0:
        return LaneGraph.empty(points.shape[1])
    return LaneGraph(points[keep], conf[keep], adj, np.where(adj > 0, sub, 0.0))


def assemble_graphs(decoded: DecodedLanes, confidence_threshold: float, edge_threshold: float) -> list[LaneGraph]:
    out = []
    for lg, pts, tp in zip(decoded.logits, decoded.points, decoded.topo_logits):
        out.append(
            assemble_graph(
                lg.detach().cpu().double().numpy(),
                pts.detach().cpu().double().numpy(),
                tp.detach().cpu().double().numpy(),
                confidence_threshold,
                edge_threshold,
            )
        )
    return out

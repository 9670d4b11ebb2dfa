from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from ..geo.types import GeoPose, SatelliteImage, SDMap

N_POINTS = 11


@dataclass
class LaneGraph:
    """Directed lane centerlines plus end-to-start connectivity.

    ``points`` is (N, N_P, 3) in ego meters, ``confidences`` (N,),
    ``adjacency`` (N, N) uint8 with ``adjacency[i, j] = 1`` when lane i flows
    into lane j. ``edge_scores`` optionally carries the edge probabilities of a
    prediction (same shape as ``adjacency``); ground truth leaves it ``None``.
    """

    points: np.ndarray
    confidences: np.ndarray
    adjacency: np.ndarray
    edge_scores: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            n_p = pts.shape[1] if pts.ndim == 3 else N_POINTS
            pts = pts.reshape(0, n_p, 3)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise InputError(f"lane points must be (N, N_P, 3), got {pts.shape}")
        n = pts.shape[0]
        conf = np.asarray(self.confidences, dtype=np.float64).reshape(n)
        adj = np.asarray(self.adjacency, dtype=np.uint8).reshape(n, n)
        if n and np.any(np.diag(adj)):
            raise InputError("adjacency diagonal must be zero")
        self.points, self.confidences, self.adjacency = pts, conf, adj
        if self.edge_scores is not None:
            self.edge_scores = np.asarray(self.edge_scores, dtype=np.float64).reshape(n, n)

    @property
    def n_lanes(self) -> int:
        return self.points.shape[0]

    @property
    def n_points(self) -> int:
        return self.points.shape[1]

    @classmethod
    def empty(cls, n_points: int = N_POINTS) -> "LaneGraph":
        return cls(np.zeros((0, n_points, 3)), np.zeros(0), np.zeros((0, 0), np.uint8))

    def successors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def edge_confidence(self) -> np.ndarray:
        """Edge scores for present edges, zeros elsewhere."""
        if self.edge_scores is None:
            return self.adjacency.astype(np.float64)
        return np.where(self.adjacency > 0, self.edge_scores, 0.0)

    def to_dict(self) -> dict:
        d = {
            "n_points": self.n_points,
            "lanes": [
                {"points": p.tolist(), "confidence": float(c)}
                for p, c in zip(self.points, self.confidences)
            ],
            "adjacency": self.adjacency.reshape(-1).astype(int).tolist(),
        }
        if self.edge_scores is not None:
            d["edge_scores"] = self.edge_scores.reshape(-1).tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "LaneGraph":
        n_p = int(d.get("n_points", N_POINTS))
        lanes = d.get("lanes", [])
        n = len(lanes)
        pts = np.asarray([ln["points"] for ln in lanes], dtype=np.float64).reshape(n, n_p, 3)
        conf = np.asarray([ln.get("confidence", 1.0) for ln in lanes], dtype=np.float64)
        adj = np.asarray(d.get("adjacency", []), dtype=np.uint8).reshape(n, n)
        scores = d.get("edge_scores")
        if scores is not None:
            scores = np.asarray(scores, dtype=np.float64).reshape(n, n)
        return cls(pts, conf, adj, scores)

    @classmethod
    def from_json(cls, text: str) -> "LaneGraph":
        return cls.from_dict(json.loads(text))

    def equals(self, other: "LaneGraph") -> bool:
        if self.points.shape != other.points.shape:
            return False
        same_scores = (self.edge_scores is None and other.edge_scores is None) or (
            self.edge_scores is not None
            and other.edge_scores is not None
            and np.array_equal(self.edge_scores, other.edge_scores)
        )
        return (
            np.array_equal(self.points, other.points)
            and np.array_equal(self.confidences, other.confidences)
            and np.array_equal(self.adjacency, other.adjacency)
            and same_scores
        )


@dataclass
class SceneBundle:
    scene_id: str
    pose: GeoPose
    sd_map: SDMap
    satellite: SatelliteImage
    gt_graph: LaneGraph | None = None
    split_key: str = ""

    @property
    def extent(self):
        return self.sd_map.extent

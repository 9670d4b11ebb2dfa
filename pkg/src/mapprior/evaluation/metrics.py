"""Lane detection (DET_l), lane topology (TOP_ll) and the aggregate OLS score."""

from __future__ import annotations

import logging
import math

import numpy as np

from ..config import MetricConfig
from ..data.types import LaneGraph
from ..errors import InputError
from .frechet import frechet_matrix

logger = logging.getLogger(__name__)


def average_precision(is_tp, n_positives: int) -> float:
    """All-point interpolated AP of a ranked list of hit flags."""
    if n_positives <= 0:
        return 0.0
    tp = np.asarray(is_tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_positives
    precision = ctp / np.arange(1, len(tp) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def _check_aligned(predictions, gts):
    if len(predictions) != len(gts):
        raise InputError(f"{len(predictions)} prediction scenes vs {len(gts)} ground-truth scenes")


def greedy_match(dist: np.ndarray, confidences, threshold: float) -> dict[int, int]:
    """Confidence-ordered one-to-one matching within ``threshold``: pred index -> gt index.

    Each prediction takes the nearest still-free GT lane; ties go to the lower index.
    """
    order = sorted(range(len(confidences)), key=lambda i: (-confidences[i], i))
    free = np.ones(dist.shape[1], dtype=bool)
    out = {}
    for i in order:
        if not free.any():
            break
        d = np.where(free, dist[i], np.inf)
        j = int(np.argmin(d))
        if d[j] <= threshold:
            out[i] = j
            free[j] = False
    return out


def _distances(predictions, gts):
    return [frechet_matrix(p.points, g.points) for p, g in zip(predictions, gts)]


def det_l_ap(predictions: list[LaneGraph], gts: list[LaneGraph], threshold: float, dists=None) -> float:
    """Pooled AP at one Frechet threshold (fraction, not percent)."""
    _check_aligned(predictions, gts)
    dists = dists if dists is not None else _distances(predictions, gts)
    ranked = sorted(
        ((float(c), s, i) for s, p in enumerate(predictions) for i, c in enumerate(p.confidences)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    free = [np.ones(g.n_lanes, dtype=bool) for g in gts]
    hits = []
    for _, s, i in ranked:
        d = np.where(free[s], dists[s][i], np.inf) if gts[s].n_lanes else np.array([np.inf])
        j = int(np.argmin(d))
        if d[j] <= threshold:
            free[s][j] = False
            hits.append(1.0)
        else:
            hits.append(0.0)
    return average_precision(hits, sum(g.n_lanes for g in gts))


def det_l(predictions: list[LaneGraph], gts: list[LaneGraph], cfg: MetricConfig | None = None) -> float:
    """Mean over Frechet thresholds of pooled lane AP, in percent."""
    cfg = cfg or MetricConfig()
    _check_aligned(predictions, gts)
    if sum(g.n_lanes for g in gts) == 0:
        logger.warning("no ground-truth lanes; DET_l reported as 0")
        return 0.0
    dists = _distances(predictions, gts)
    aps = [det_l_ap(predictions, gts, t, dists) for t in cfg.frechet_thresholds]
    return 100.0 * float(np.mean(aps))


def topology_lane_aps(pred: LaneGraph, gt: LaneGraph, gate: float) -> list[float]:
    """AP of predicted successors for every GT lane with at least one successor."""
    if gt.n_lanes == 0:
        return []
    dist = frechet_matrix(pred.points, gt.points) if pred.n_lanes else np.zeros((0, gt.n_lanes))
    p2g = greedy_match(dist, pred.confidences, gate)
    g2p = {g: p for p, g in p2g.items()}
    scores = pred.edge_confidence() if pred.n_lanes else np.zeros((0, 0))
    aps = []
    for g in range(gt.n_lanes):
        succ = set(gt.successors(g).tolist())
        if not succ:
            continue
        p = g2p.get(g)
        if p is None:
            aps.append(0.0)
            continue
        cands = [
            (float(scores[p, q]), q)
            for q in np.flatnonzero(pred.adjacency[p]).tolist()
            if q != p and q in p2g
        ]
        cands.sort(key=lambda t: (-t[0], t[1]))
        hits = [1.0 if p2g[q] in succ else 0.0 for _, q in cands]
        aps.append(average_precision(hits, len(succ)))
    return aps


def top_ll(predictions: list[LaneGraph], gts: list[LaneGraph], cfg: MetricConfig | None = None) -> float:
    """Mean successor AP over GT lanes that have successors, in percent.

    Scenes without any GT edge are skipped. Predicted edges whose target
    matches no GT lane are ignored.
    """
    cfg = cfg or MetricConfig()
    _check_aligned(predictions, gts)
    aps = []
    for s, (p, g) in enumerate(zip(predictions, gts)):
        if g.n_lanes == 0 or not g.adjacency.any():
            logger.info("scene %d has no ground-truth edges; excluded from TOP_ll", s)
            continue
        aps.extend(topology_lane_aps(p, g, cfg.topology_gate))
    if not aps:
        logger.warning("no ground-truth edges in any scene; TOP_ll reported as 0")
        return 0.0
    return 100.0 * float(np.mean(aps))


def ols(det_l: float, det_t: float, top_ll: float, top_lt: float) -> float:
    """Aggregate score from four percentages; topology terms enter square-rooted."""
    vals = (det_l, det_t, top_ll, top_lt)
    for name, v in zip(("det_l", "det_t", "top_ll", "top_lt"), vals):
        if not (0.0 <= v <= 100.0):
            raise InputError(f"{name}={v} outside [0, 100]")
    dl, dt, tll, tlt = (v / 100.0 for v in vals)
    return 100.0 * 0.25 * (dl + dt + math.sqrt(tll) + math.sqrt(tlt))

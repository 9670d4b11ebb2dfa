from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..config import MetricConfig, as_dict
from ..data.io import atomic_write_text
from ..data.types import LaneGraph
from ..errors import InputError
from .metrics import det_l, ols, top_ll


@dataclass
class EvalReport:
    det_l: float
    top_ll: float
    det_t: float | None = None
    top_lt: float | None = None
    ols: float | None = None
    per_scene: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"det_l": self.det_l, "top_ll": self.top_ll}
        for key in ("det_t", "top_lt", "ols"):
            val = getattr(self, key)
            if val is not None:
                d[key] = val
        d["config"] = self.config
        d["per_scene"] = self.per_scene
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def per_scene_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["scene_id", "det_l", "top_ll", "n_gt", "n_pred"], lineterminator="\n")
        writer.writeheader()
        for row in self.per_scene:
            writer.writerow(row)
        return buf.getvalue()

    def write(self, path, csv_path=None) -> None:
        atomic_write_text(path, self.to_json())
        if csv_path is not None:
            atomic_write_text(csv_path, self.per_scene_csv())


def evaluate_graphs(
    predictions: list[LaneGraph],
    gts: list[LaneGraph],
    cfg: MetricConfig | None = None,
    scene_ids: list[str] | None = None,
    det_t: float | None = None,
    top_lt: float | None = None,
) -> EvalReport:
    """Dataset-level DET_l / TOP_ll; OLS only when both traffic-element scores are supplied."""
    cfg = cfg or MetricConfig()
    if len(predictions) != len(gts):
        raise InputError(f"scene count mismatch: {len(predictions)} predictions vs {len(gts)} ground truths")
    if scene_ids is None:
        scene_ids = [str(i) for i in range(len(gts))]
    dl = det_l(predictions, gts, cfg)
    tl = top_ll(predictions, gts, cfg)
    per_scene = []
    for sid, p, g in zip(scene_ids, predictions, gts):
        per_scene.append(
            {
                "scene_id": sid,
                "det_l": det_l([p], [g], cfg),
                "top_ll": top_ll([p], [g], cfg) if g.adjacency.any() else None,
                "n_gt": g.n_lanes,
                "n_pred": p.n_lanes,
            }
        )
    score = None
    if det_t is not None and top_lt is not None:
        score = ols(dl, det_t, tl, top_lt)
    return EvalReport(dl, tl, det_t, top_lt, score, per_scene, as_dict(cfg))


def read_prediction_dump(root, scene_ids: list[str]) -> list[LaneGraph]:
    """Load ``{root}/{scene_id}/lane_graph.json`` for every scene id."""
    root = Path(root)
    missing = [s for s in scene_ids if not (root / s / "lane_graph.json").is_file()]
    if missing:
        raise InputError(f"prediction dump {root} lacks scenes: {', '.join(missing[:5])}")
    return [LaneGraph.from_json((root / s / "lane_graph.json").read_text()) for s in scene_ids]

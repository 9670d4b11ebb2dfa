"""Lane-graph metrics and dataset reports."""

from .frechet import discrete_frechet, frechet_matrix
from .metrics import average_precision, det_l, det_l_ap, greedy_match, ols, top_ll, topology_lane_aps
from .report import EvalReport, evaluate_graphs, read_prediction_dump

__all__ = [
    "EvalReport",
    "average_precision",
    "det_l",
    "det_l_ap",
    "discrete_frechet",
    "evaluate_graphs",
    "frechet_matrix",
    "greedy_match",
    "ols",
    "read_prediction_dump",
    "top_ll",
    "topology_lane_aps",
]

"""Optimal one-to-one assignment of predicted lanes to ground-truth lanes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]
    unmatched_predictions: list[int] = field(default_factory=list)

    @property
    def pred_indices(self) -> np.ndarray:
        return np.asarray([p for p, _ in self.pairs], dtype=np.int64)

    @property
    def gt_indices(self) -> np.ndarray:
        return np.asarray([g for _, g in self.pairs], dtype=np.int64)


def match_cost(probs, pred_points_norm, gt_points_norm, w_cls: float, w_reg: float) -> np.ndarray:
    """cost[i, j] = -w_cls * p_i + w_reg * mean |pred_i - gt_j| over points and coordinates."""
    probs = np.asarray(probs, dtype=np.float64)
    pred = np.asarray(pred_points_norm, dtype=np.float64).reshape(len(probs), -1)
    gt = np.asarray(gt_points_norm, dtype=np.float64).reshape(-1, pred.shape[1])
    l1 = np.abs(pred[:, None, :] - gt[None, :, :]).mean(-1)
    return -w_cls * probs[:, None] + w_reg * l1


def solve_assignment(cost: np.ndarray) -> MatchResult:
    """Minimum-cost assignment of rows (predictions) to columns (ground truth).

    Among equal-cost choices an unmatched prediction with a lower index
    replaces a matched one with identical cost to the same column.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n_pred = cost.shape[0]
    if cost.size == 0:
        return MatchResult([], list(range(n_pred)))
    rows, cols = linear_sum_assignment(cost)
    owner = dict(zip(cols.tolist(), rows.tolist()))
    matched = set(rows.tolist())
    changed = True
    while changed:
        changed = False
        for u in range(n_pred):
            if u in matched:
                continue
            for col, p in sorted(owner.items()):
                if u < p and cost[u, col] == cost[p, col]:
                    owner[col] = u
                    matched.discard(p)
                    matched.add(u)
                    changed = True
                    break
    pairs = sorted((p, c) for c, p in owner.items())
    unmatched = [i for i in range(n_pred) if i not in matched]
    return MatchResult(pairs, unmatched)


def match(logits, pred_points_norm, gt_points_norm, w_cls: float = 1.5, w_reg: float = 2.5) -> MatchResult:
    """Match one scene's predictions to its ground truth lanes."""
    logits = np.asarray(logits, dtype=np.float64)
    gt = np.asarray(gt_points_norm, dtype=np.float64)
    if gt.shape[0] == 0:
        return MatchResult([], list(range(len(logits))))
    probs = 1.0 / (1.0 + np.exp(-logits))
    return solve_assignment(match_cost(probs, pred_points_norm, gt, w_cls, w_reg))

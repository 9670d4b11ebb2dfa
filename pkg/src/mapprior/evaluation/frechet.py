from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import InputError


def discrete_frechet(a, b) -> float:
    """Discrete Frechet distance between two point sequences (any dimension).

    Classic O(p q) dynamic program over the pairwise Euclidean distances.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[None]
    if b.ndim == 1:
        b = b[None]
    if len(a) == 0 or len(b) == 0:
        raise InputError("discrete_frechet needs non-empty point lists")
    d = cdist(a, b)
    p, q = d.shape
    ca = np.empty((p, q))
    ca[0, 0] = d[0, 0]
    for i in range(1, p):
        ca[i, 0] = max(ca[i - 1, 0], d[i, 0])
    for j in range(1, q):
        ca[0, j] = max(ca[0, j - 1], d[0, j])
    for i in range(1, p):
        for j in range(1, q):
            ca[i, j] = max(min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1]), d[i, j])
    return float(ca[-1, -1])


def frechet_matrix(pred_points, gt_points) -> np.ndarray:
    """Pairwise Frechet distances, (N_pred, N_gt)."""
    out = np.empty((len(pred_points), len(gt_points)))
    for i, p in enumerate(pred_points):
        for j, g in enumerate(gt_points):
            out[i, j] = discrete_frechet(p, g)
    return out

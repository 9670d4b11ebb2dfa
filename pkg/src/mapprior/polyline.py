"""Arc-length resampling shared by SD encoding and ground-truth derivation."""

from __future__ import annotations

import numpy as np

from .errors import InputError


def polyline_length(points) -> float:
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def resample_polyline(points, n: int) -> np.ndarray:
    """Return ``n`` points equally spaced in arc length along ``points``.

    Works for any point dimension. Endpoints are preserved exactly; a single
    point or a zero-length polyline yields that point repeated ``n`` times.
    """
    if n < 2:
        raise InputError(f"resample count must be >= 2, got {n}")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise InputError("resample_polyline needs a non-empty (k, D) point array")
    first, last = pts[0].copy(), pts[-1].copy()
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = seg.sum() if len(seg) else 0.0
    if total <= 0.0:
        return np.repeat(pts[:1], n, axis=0)
    # np.interp wants strictly increasing abscissae
    keep = np.concatenate([[True], seg > 0.0])
    pts = pts[keep]
    cum = np.concatenate([[0.0], np.cumsum(seg[seg > 0.0])])
    targets = np.linspace(0.0, total, n)
    out = np.empty((n, pts.shape[1]), dtype=np.float64)
    for d in range(pts.shape[1]):
        out[:, d] = np.interp(targets, cum, pts[:, d])
    out[0] = first
    out[-1] = last
    return out

"""Planar polyline geometry shared by the flow and shape modules."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist


def diameter(points) -> float:
    """Maximum pairwise Euclidean distance; 0 for fewer than two points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 or pts.shape[0] < 2:
        return 0.0
    if pts.shape[0] > 64 and pts.shape[1] == 2:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass  # collinear input; fall through to brute force
    return float(pdist(pts).max())


def edges(points: np.ndarray, closed: bool):
    """Start points and direction vectors of a polyline's edges."""
    if closed and len(points) > 2:
        return points, np.roll(points, -1, axis=0) - points
    return points[:-1], np.diff(points, axis=0)


def point_segments_distance(p, starts: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Distance from ``p`` to each segment ``starts + u * dirs``, ``u`` in [0, 1]."""
    rel = np.asarray(p, dtype=float) - starts
    len2 = np.einsum("ij,ij->i", dirs, dirs)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(len2 > 0, np.einsum("ij,ij->i", rel, dirs) / len2, 0.0)
    u = np.clip(u, 0.0, 1.0)
    return np.linalg.norm(rel - u[:, None] * dirs, axis=1)


def polyline_point_distance(points, p, closed: bool = False, max_edge: float = np.inf) -> float:
    """Distance from ``p`` to a polyline.

    Edges longer than ``max_edge`` are represented only by their endpoints,
    since a chord much longer than the correlation length says little about
    where the advected curve actually runs.
    """
    pts = np.asarray(points, dtype=float)
    best = float(np.min(np.linalg.norm(pts - p, axis=1)))
    if len(pts) < 2:
        return best
    s, v = edges(pts, closed)
    keep = np.einsum("ij,ij->i", v, v) <= max_edge**2
    if np.any(keep):
        best = min(best, float(point_segments_distance(p, s[keep], v[keep]).min()))
    return best


def _segment_pair_distance(a0, a1, b0, b1) -> np.ndarray:
    """Minimum distance between segment pairs, broadcasting over leading axes."""
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    a = np.sum(d1 * d1, -1)
    e = np.sum(d2 * d2, -1)
    f = np.sum(d2 * r, -1)
    c = np.sum(d1 * r, -1)
    b = np.sum(d1 * d2, -1)
    denom = a * e - b * b
    tiny = 1e-300
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > tiny, np.clip((b * f - c * e) / denom, 0, 1), 0.0)
        # second segment degenerate: project its point onto the first
        s = np.where(e > tiny, s, np.where(a > tiny, np.clip(-c / a, 0, 1), 0.0))
        t = np.where(e > tiny, (b * s + f) / e, 0.0)
        s = np.where(t < 0, np.where(a > tiny, np.clip(-c / a, 0, 1), 0.0), s)
        s = np.where(t > 1, np.where(a > tiny, np.clip((b - c) / a, 0, 1), 0.0), s)
    t = np.clip(t, 0, 1)
    diff = (a0 + s[..., None] * d1) - (b0 + t[..., None] * d2)
    return np.sqrt(np.sum(diff * diff, -1))


def polyline_distance(a, b, closed_a: bool = False, closed_b: bool = False) -> float:
    """Minimum distance between two polylines (0 when they cross)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 1 or len(b) == 1:
        if len(a) == 1 and len(b) == 1:
            return float(np.linalg.norm(a[0] - b[0]))
        single, other, closed = (a[0], b, closed_b) if len(a) == 1 else (b[0], a, closed_a)
        return polyline_point_distance(other, single, closed)
    sa, va = edges(a, closed_a)
    sb, vb = edges(b, closed_b)
    d = _segment_pair_distance(
        sa[:, None, :], (sa + va)[:, None, :], sb[None, :, :], (sb + vb)[None, :, :]
    )
    return float(d.min())

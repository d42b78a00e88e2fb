"""Monte Carlo integration of the n-point motion of an isotropic Brownian flow.

Each Euler-Maruyama step draws the exact joint Gaussian increment of the
field at the current tracked points: covariance ``dt * Sigma`` with
``Sigma`` the block matrix ``[b(x_l - x_m)]``.  Curves are polylines whose
edges are bisected whenever they stretch beyond ``2 * refine_threshold``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg

from .covariance import CorrelationFamily, block_covariance
from .geometry import diameter as _diameter
from .geometry import polyline_distance
from .seeds import derive_seed, make_rng

CHOLESKY = "cholesky-with-jitter"
EIGEN_CLIP = "eigenvalue-clip"
JITTER_RETRIES = 3


class FactorizationError(ArithmeticError):
    """The step covariance could not be factorized even after jitter escalation."""

    def __init__(self, message: str, min_eigenvalue: float):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


@dataclass(frozen=True)
class StepScheme:
    dt: float = 0.01
    jitter: float = 1e-10
    factorization: str = CHOLESKY

    def __post_init__(self):
        if not self.dt >= 0 or not math.isfinite(self.dt):
            raise ValueError("dt must be a finite nonnegative real")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")
        if self.factorization not in (CHOLESKY, EIGEN_CLIP):
            raise ValueError(f"unknown factorization {self.factorization!r}")

    def check(self, family: CorrelationFamily) -> list[str]:
        """Warnings about the step size relative to the correlation length."""
        limit = family.length_scale**2 / 10
        if self.dt > limit:
            return [f"dt={self.dt} exceeds length_scale^2/10={limit}"]
        return []

    def to_record(self) -> dict:
        return {"dt": self.dt, "jitter": self.jitter, "factorization": self.factorization}


@dataclass
class PointCloud:
    points: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] == 0:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class CurveState:
    """Polyline of tracked points with adaptive refinement.

    Consecutive points are adjacent; ``closed`` adds the edge from the last
    point back to the first.  ``breaks`` marks edges that no longer exist
    because points between them were pruned, so a state may hold several
    disjoint pieces of the advected curve.
    """

    cloud: PointCloud
    closed: bool = False
    refine_threshold: float = 0.25
    max_points: int = 512
    insertion_log: list = field(default_factory=list)
    capped: bool = False
    breaks: np.ndarray | None = None

    def __post_init__(self):
        if not self.refine_threshold > 0:
            raise ValueError("refine_threshold must be positive")
        if self.max_points < 1:
            raise ValueError("max_points must be at least 1")
        if self.breaks is None:
            self.breaks = np.zeros(self.n_edges, dtype=bool)
        else:
            self.breaks = np.asarray(self.breaks, dtype=bool)
            if self.breaks.shape != (self.n_edges,):
                raise ValueError("breaks must have one flag per edge")

    @classmethod
    def segment(cls, a, b, **kw) -> "CurveState":
        return cls.polyline([a, b], closed=False, **kw)

    @classmethod
    def circle(cls, center, radius: float, **kw) -> "CurveState":
        thr = kw.get("refine_threshold", 0.25)
        n = max(8, int(math.ceil(2 * math.pi * radius / thr)))
        ang = 2 * math.pi * np.arange(n) / n
        pts = np.asarray(center, dtype=float) + radius * np.column_stack([np.cos(ang), np.sin(ang)])
        return cls(PointCloud(pts), closed=True, **kw)

    @classmethod
    def polyline(cls, points, closed: bool = False, **kw) -> "CurveState":
        curve = cls(PointCloud(np.asarray(points, dtype=float)), closed=closed, **kw)
        refine(curve)
        curve.insertion_log.clear()
        return curve

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points

    @property
    def time(self) -> float:
        return self.cloud.time

    @property
    def n_edges(self) -> int:
        n = len(self.cloud.points)
        if n < 2:
            return 0
        return n if self.closed and n > 2 else n - 1

    def _edge_vectors(self):
        pts = self.points
        m = self.n_edges
        base = pts[:m]
        nxt = np.roll(pts, -1, axis=0)[:m] if m == len(pts) else pts[1 : m + 1]
        return base, nxt - base

    def segments(self):
        """Start points and direction vectors of the edges that exist."""
        base, vec = self._edge_vectors()
        keep = ~self.breaks
        return base[keep], vec[keep]

    def edge_lengths(self) -> np.ndarray:
        """Lengths of existing edges."""
        _, vec = self.segments()
        return np.sqrt(np.einsum("ij,ij->i", vec, vec))

    def snapshot(self) -> "CurveState":
        """Copy of the geometry without the (possibly long) insertion log."""
        return CurveState(
            PointCloud(self.points.copy(), self.time),
            closed=self.closed,
            refine_threshold=self.refine_threshold,
            max_points=self.max_points,
            capped=self.capped,
            breaks=self.breaks.copy(),
        )


def prune(curve: CurveState, keep) -> int:
    """Drop tracked points where ``keep`` is False, in place.

    Edges touching a dropped point disappear; the survivors keep their
    order.  Returns the number of removed points.  At least one point is
    always retained.
    """
    keep = np.asarray(keep, dtype=bool)
    n = len(curve.points)
    if keep.shape != (n,):
        raise ValueError("keep mask must have one entry per point")
    if keep.all():
        return 0
    if not keep.any():
        keep = keep.copy()
        keep[0] = True
    idx = np.flatnonzero(keep)
    m_old = curve.n_edges
    old_breaks = curve.breaks
    pts = curve.points[idx]
    curve.cloud.points = pts
    k = len(idx)
    m_new = k if curve.closed and k > 2 else max(k - 1, 0)
    nxt = np.roll(idx, -1)[:m_new]
    cur = idx[:m_new]
    # the edge survives only if its endpoints were neighbours and it existed
    consecutive = (nxt - cur) % n == 1
    if m_old:
        consecutive &= ~old_breaks[cur % m_old] & (cur < m_old)
    if not curve.closed or k <= 2:
        consecutive &= nxt > cur
    curve.breaks = ~consecutive
    return n - k


def step_covariance(family: CorrelationFamily, points: np.ndarray) -> np.ndarray:
    """Block covariance ``Sigma`` with an interleaved (x0, y0, x1, y1, ...) layout."""
    n, d = points.shape
    if d != 2:
        return block_covariance(family, points)
    ell2 = family.length_scale**2
    dx = points[:, 0, None] - points[None, :, 0]
    dy = points[:, 1, None] - points[None, :, 1]
    s2 = (dx * dx + dy * dy) / ell2
    e = np.exp(-0.5 * s2)
    cross = ((family.k_normal - family.k_longitudinal) / ell2) * e
    diag = e - family.k_normal * s2 * e
    out = np.empty((n, 2, n, 2))
    out[:, 0, :, 0] = diag + cross * dx * dx
    out[:, 1, :, 1] = diag + cross * dy * dy
    xy = cross * dx * dy
    out[:, 0, :, 1] = xy
    out[:, 1, :, 0] = xy
    return out.reshape(2 * n, 2 * n)


def factorize(cov: np.ndarray, scheme: StepScheme) -> np.ndarray:
    """Square-root factor ``F`` with ``F F^T ~= cov``.

    Cholesky is attempted with the scheme's jitter on the diagonal and
    the jitter is raised tenfold up to three times before giving up.
    """
    m = cov.shape[0]
    if scheme.factorization == EIGEN_CLIP:
        lam, vec = np.linalg.eigh(cov)
        return vec * np.sqrt(np.clip(lam, 0.0, None))
    jitter = scheme.jitter if scheme.jitter > 0 else 1e-12
    base = scheme.jitter
    diag = np.arange(m)
    for attempt in range(JITTER_RETRIES + 1):
        work = cov.copy()
        work[diag, diag] += base if attempt == 0 else jitter * 10**attempt
        try:
            return scipy.linalg.cholesky(work, lower=True, overwrite_a=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
    lam_min = float(np.linalg.eigvalsh(cov)[0])
    raise FactorizationError(
        f"covariance not factorizable after {JITTER_RETRIES} jitter escalations; "
        f"minimum eigenvalue {lam_min:.3e}",
        lam_min,
    )


def sample_increment(
    family: CorrelationFamily, cloud: PointCloud, scheme: StepScheme, rng: np.random.Generator
) -> np.ndarray:
    """Joint Gaussian increment of all tracked points over one step, shape ``(n, d)``."""
    pts = cloud.points
    n, d = pts.shape
    z = rng.standard_normal(n * d)
    if n == 1:
        return math.sqrt(scheme.dt) * z.reshape(1, d)
    factor = factorize(step_covariance(family, pts), scheme)
    return (math.sqrt(scheme.dt) * (factor @ z)).reshape(n, d)


def step_points(
    family: CorrelationFamily, cloud: PointCloud, scheme: StepScheme, rng: np.random.Generator
) -> PointCloud:
    inc = sample_increment(family, cloud, scheme, rng)
    return PointCloud(cloud.points + inc, cloud.time + scheme.dt)


def refine(curve: CurveState) -> int:
    """Bisect existing edges longer than ``2 * refine_threshold`` in place.

    Returns the number of inserted points.  If the cap ``max_points`` stops
    refinement the longest edges are split first and ``curve.capped`` is set.
    """
    limit2 = (2.0 * curve.refine_threshold) ** 2
    inserted = 0
    while curve.n_edges:
        base, seg = curve._edge_vectors()
        len2 = np.einsum("ij,ij->i", seg, seg)
        long = np.flatnonzero((len2 > limit2) & ~curve.breaks)
        if long.size == 0:
            break
        room = curve.max_points - len(curve.points)
        if room <= 0:
            curve.capped = True
            break
        if long.size > room:
            curve.capped = True
            order = np.argsort(-len2[long], kind="stable")[:room]
            long = np.sort(long[order])
        mids = base[long] + 0.5 * seg[long]
        was_closed_ring = curve.n_edges == len(curve.points)
        curve.cloud.points = np.insert(curve.points, long + 1, mids, axis=0)
        breaks = np.insert(curve.breaks, long + 1, False)
        if curve.closed and not was_closed_ring:
            # a two-point closed curve becomes a ring once it has three points
            breaks = np.append(breaks, False)[: curve.n_edges]
        curve.breaks = breaks
        t = curve.time
        curve.insertion_log.extend((t, int(i)) for i in long)
        inserted += long.size
    return inserted


@dataclass
class Trajectory:
    snapshots: list
    warnings: list = field(default_factory=list)
    insertion_log: list = field(default_factory=list)
    steps: int = 0
    stopped_early: bool = False
    final: CurveState | None = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])


Observer = Callable[[CurveState, int], bool]


def default_stride(n_steps: int, max_snapshots: int = 200) -> int:
    return max(1, math.ceil(n_steps / (max_snapshots - 2)))


def simulate_curve(
    family: CorrelationFamily,
    curve: CurveState,
    horizon: float,
    scheme: StepScheme,
    rng,
    snapshot_stride: int | None = None,
    observer: Observer | None = None,
) -> Trajectory:
    """Advect ``curve`` for ``horizon`` time units.

    ``observer(curve, step)`` is called on the live state after every step
    (and once before the first); returning ``True`` stops the run.
    The input curve is not modified.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    rng = make_rng(rng)
    live = curve.snapshot()
    live.insertion_log = list(curve.insertion_log)
    n_steps = int(round(horizon / scheme.dt)) if scheme.dt > 0 else 0
    stride = snapshot_stride or default_stride(n_steps)
    traj = Trajectory(snapshots=[live.snapshot()], warnings=list(scheme.check(family)))
    if observer is not None and observer(live, 0):
        traj.stopped_early = True
        traj.final = live
        return traj
    was_capped = live.capped
    for step in range(1, n_steps + 1):
        live.cloud = step_points(family, live.cloud, scheme, rng)
        refine(live)
        if live.capped and not was_capped:
            traj.warnings.append(
                f"refinement capped at max_points={live.max_points} at t={live.time:.4g}"
            )
            was_capped = True
        if step % stride == 0 or step == n_steps:
            traj.snapshots.append(live.snapshot())
        traj.steps = step
        if observer is not None and observer(live, step):
            traj.stopped_early = step < n_steps
            if traj.snapshots[-1].time != live.time:
                traj.snapshots.append(live.snapshot())
            break
    traj.insertion_log = live.insertion_log
    traj.final = live
    return traj


def simulate_points(
    family: CorrelationFamily,
    points,
    horizon: float,
    scheme: StepScheme,
    rng,
) -> np.ndarray:
    """Advance a batch of independent small point clouds.

    ``points`` has shape ``(B, n, d)``; every cloud is driven by its own
    field sample.  Used for two-point and few-point ensembles where looping
    over replicas in Python would dominate the cost.
    """
    rng = make_rng(rng)
    x = np.array(points, dtype=float, copy=True)
    if x.ndim == 2:
        x = x[None]
    B, n, d = x.shape
    n_steps = int(round(horizon / scheme.dt)) if scheme.dt > 0 else 0
    sq = math.sqrt(scheme.dt)
    eye = np.eye(n * d)
    for _ in range(n_steps):
        z = rng.standard_normal((B, n * d))
        if n == 1:
            x += sq * z.reshape(B, 1, d)
            continue
        cov = block_covariance(family, x) + scheme.jitter * eye
        try:
            fac = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            fac = np.stack([factorize(c, scheme) for c in cov])
        x += sq * np.einsum("bij,bj->bi", fac, z).reshape(B, n, d)
    return x


def diameter(cloud) -> float:
    """Largest distance between tracked points (0 for a single point)."""
    pts = cloud.points if hasattr(cloud, "points") else cloud
    return _diameter(pts)


@dataclass
class SplitEstimate:
    t1: float
    t2: float
    probability: float
    std_error: float
    replicas: int
    capped: int = 0  # runs whose refinement hit max_points

    def to_record(self) -> dict:
        return dict(
            t1=self.t1, t2=self.t2, probability=self.probability,
            std_error=self.std_error, replicas=self.replicas, capped=self.capped,
        )


def split_meeting_probability(
    family: CorrelationFamily,
    gamma: CurveState,
    gamma_bar: CurveState,
    t_total: float,
    splits: Sequence[tuple[float, float]],
    contact_radius: float,
    replicas: int,
    seed: int,
    scheme: StepScheme | None = None,
) -> list[SplitEstimate]:
    """Estimate P[Phi_{t1}(gamma) comes within eta of an independent Phi~_{t2}(gamma_bar)].

    Replica ``i`` of split ``k`` uses streams ``derive_seed(seed, 2*(k*replicas+i))``
    and the next index for the independent copy.
    """
    if not splits:
        raise ValueError("splits must be nonempty")
    if not contact_radius > 0:
        raise ValueError("contact radius must be positive")
    scheme = scheme or StepScheme()
    out = []
    for k, (t1, t2) in enumerate(splits):
        if abs(t1 + t2 - t_total) > 1e-9 * max(1.0, t_total):
            raise ValueError(f"split {(t1, t2)} does not sum to {t_total}")
        hits = np.zeros(replicas)
        capped = 0
        for i in range(replicas):
            base = 2 * (k * replicas + i)
            a = _advance(family, gamma, t1, scheme, derive_seed(seed, base))
            b = _advance(family, gamma_bar, t2, scheme, derive_seed(seed, base + 1))
            dist = polyline_distance(a.points, b.points, a.closed, b.closed)
            hits[i] = dist <= contact_radius
            capped += a.capped + b.capped
        p = float(hits.mean()) if replicas else float("nan")
        se = math.sqrt(p * (1 - p) / replicas) if replicas else float("nan")
        out.append(SplitEstimate(float(t1), float(t2), p, se, replicas, int(capped)))
    return out


def _advance(family, curve, horizon, scheme, seed) -> CurveState:
    if horizon <= 0:
        return curve
    traj = simulate_curve(family, curve, horizon, scheme, seed, snapshot_stride=10**9)
    return traj.final


def export_trajectory_csv(traj: Trajectory, path) -> None:
    """Write ``time, point_index, x, y`` rows for every snapshot."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "point_index", "x", "y"])
        for snap in traj.snapshots:
            for j, (x, y) in enumerate(snap.points[:, :2]):
                w.writerow([f"{snap.time:.9g}", j, f"{x:.9g}", f"{y:.9g}"])


def trajectory_records(traj: Trajectory) -> Iterable[dict]:
    for snap in traj.snapshots:
        yield {
            "time": snap.time,
            "closed": snap.closed,
            "capped": snap.capped,
            "points": snap.points.tolist(),
        }


def export_trajectory_jsonl(traj: Trajectory, path) -> None:
    with open(path, "w") as fh:
        for rec in trajectory_records(traj):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

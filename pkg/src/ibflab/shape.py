"""Swept regions, hitting times and the stable norm of the advected curve."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .covariance import CorrelationFamily
from .flow import CurveState, StepScheme, Trajectory, prune, simulate_curve
from .geometry import diameter, point_segments_distance
from .seeds import derive_seed


class InsufficientDataError(ValueError):
    """Too few samples for the requested statistic."""


# --------------------------------------------------------------------------
# swept region raster
# --------------------------------------------------------------------------


@dataclass
class SweptGrid:
    """Raster of the swept region with per-cell first-cover times.

    Cell ``(i, j)`` has centre ``origin + cell_size * (i - extent + 0.5, j - extent + 0.5)``;
    row index ``i`` runs along x.
    """

    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    cell_size: float = 0.25
    extent: int = 64
    first_cover_time: np.ndarray | None = None
    growth_log: list = field(default_factory=list)

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.extent < 1:
            raise ValueError("extent must be at least one cell")
        self.origin = np.asarray(self.origin, dtype=float)
        if self.first_cover_time is None:
            self.first_cover_time = np.full((2 * self.extent, 2 * self.extent), np.inf)

    @property
    def covered(self) -> np.ndarray:
        return np.isfinite(self.first_cover_time)

    def covered_at(self, t: float) -> np.ndarray:
        return self.first_cover_time <= t

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        c = (np.arange(2 * self.extent) - self.extent + 0.5) * self.cell_size
        return self.origin[0] + c, self.origin[1] + c

    def cell_index(self, pts: np.ndarray) -> np.ndarray:
        return np.floor((pts - self.origin) / self.cell_size).astype(np.int64) + self.extent

    def _grow(self, needed: int) -> None:
        new = self.extent
        while new < needed:
            new *= 2
        pad = new - self.extent
        self.first_cover_time = np.pad(self.first_cover_time, pad, constant_values=np.inf)
        self.growth_log.append((self.extent, new))
        self.extent = new

    def copy(self) -> "SweptGrid":
        return SweptGrid(
            self.origin.copy(), self.cell_size, self.extent,
            self.first_cover_time.copy(), list(self.growth_log),
        )

    def mark(self, pts: np.ndarray, t: float) -> None:
        """Cover the cells containing ``pts`` at time ``t``."""
        if len(pts) == 0:
            return
        idx = self.cell_index(pts)
        reach = max(int(np.max(np.abs(idx - self.extent + 0.5))) + 1, 0)
        if reach > self.extent:
            self._grow(reach)
            idx = self.cell_index(pts)
        fct = self.first_cover_time
        cur = fct[idx[:, 0], idx[:, 1]]
        upd = cur > t
        if np.any(upd):
            fct[idx[upd, 0], idx[upd, 1]] = t


def rasterize_points(starts: np.ndarray, dirs: np.ndarray, vertices: np.ndarray, cell_size: float):
    """Sample points along segments densely enough to hit every crossed cell.

    Spacing is a third of a cell, which approximates a supercover raster
    (cells clipped only at a corner can be missed).
    """
    if len(starts) == 0:
        return vertices
    lengths = np.sqrt(np.einsum("ij,ij->i", dirs, dirs))
    k = np.ceil(lengths / (cell_size / 3.0)).astype(np.int64) + 1
    seg = np.repeat(np.arange(len(starts)), k)
    offs = np.arange(k.sum()) - np.repeat(np.cumsum(k) - k, k)
    u = offs / np.repeat(np.maximum(k - 1, 1), k)
    samples = starts[seg] + u[:, None] * dirs[seg]
    return np.concatenate([samples, vertices])


def accumulate_swept(grid: SweptGrid, snapshot: CurveState) -> SweptGrid:
    """Add one curve snapshot to the swept raster (in place; returned for chaining)."""
    s, v = snapshot.segments()
    grid.mark(rasterize_points(s, v, snapshot.points, grid.cell_size), snapshot.time)
    return grid


def interior_depth(grid: SweptGrid) -> np.ndarray:
    """Distance (in length units) from each covered cell to the nearest uncovered one."""
    cov = np.pad(grid.covered, 1, constant_values=False)
    return ndimage.distance_transform_edt(cov)[1:-1, 1:-1] * grid.cell_size


# --------------------------------------------------------------------------
# online tracking of one replica
# --------------------------------------------------------------------------


@dataclass
class HittingSample:
    target: tuple
    R: float
    tau: float
    censored: bool
    replica: int = -1
    seed: int = 0

    def to_record(self) -> dict:
        return {
            "target": list(self.target), "R": self.R,
            "tau": None if self.censored else self.tau,
            "censored": self.censored, "replica": self.replica, "seed": self.seed,
        }


def curve_distance(curve: CurveState, p) -> float:
    p = np.asarray(p, dtype=float)
    best = float(np.min(np.linalg.norm(curve.points - p, axis=1)))
    s, v = curve.segments()
    if len(s):
        best = min(best, float(point_segments_distance(p, s, v).min()))
    return best


class ReplicaTracker:
    """Observer for :func:`simulate_curve` that records hitting times online.

    Targets are ``(P, R)`` pairs.  After every step the tracker updates the
    swept raster, checks ``dist(curve, P) <= R`` together with the
    diameter-at-least-one clause, and optionally prunes tracked points that
    sit deeper than ``prune_margin`` inside the swept region.  It stops the
    run once every target is hit and ``min_time`` has passed.
    """

    def __init__(
        self,
        targets: Sequence[tuple[Sequence[float], float]],
        grid: SweptGrid | None = None,
        prune_margin: float | None = None,
        prune_interval: float = 0.25,
        min_time: float = 0.0,
        min_diameter: float = 1.0,
        point_budget: int | None = None,
        budget_slack: float = 0.75,
        thin_cell: float | None = None,
        thin_keep: int = 4,
        thin_depth: float = 0.0,
    ):
        self.targets = [(np.asarray(p, dtype=float), float(r)) for p, r in targets]
        self.tau = np.full(len(self.targets), np.inf)
        self.grid = grid
        self.prune_margin = prune_margin
        self.prune_interval = float(prune_interval)
        self._last_prune = 0.0
        self.min_time = min_time
        self.min_diameter = min_diameter
        self.point_budget = point_budget
        self.budget_slack = budget_slack
        self.thin_cell = thin_cell
        self.thin_keep = thin_keep
        self.thin_depth = thin_depth
        self.pruned = 0
        self.max_points_seen = 0
        if (prune_margin is not None or point_budget is not None) and grid is None:
            raise ValueError("pruning needs a swept grid")

    def _check_targets(self, curve: CurveState) -> None:
        open_ = np.flatnonzero(~np.isfinite(self.tau))
        if open_.size == 0:
            return
        pts = curve.points
        s, v = curve.segments()
        diam = None
        for k in open_:
            p, r = self.targets[k]
            near = np.min(np.linalg.norm(pts - p, axis=1))
            if near > r and len(s):
                near = min(near, float(point_segments_distance(p, s, v).min()))
            if near <= r:
                if diam is None:
                    diam = diameter(pts)
                if diam >= self.min_diameter:
                    self.tau[k] = curve.time

    def __call__(self, curve: CurveState, step: int) -> bool:
        self.max_points_seen = max(self.max_points_seen, len(curve.points))
        if self.grid is not None:
            accumulate_swept(self.grid, curve)
        self._check_targets(curve)
        over = self.point_budget is not None and len(curve.points) > self.point_budget
        scheduled = (
            self.prune_margin is not None
            and step > 0
            and curve.time >= self._last_prune + self.prune_interval - 1e-12
        )
        if over or scheduled:
            self._prune(curve)
            self._last_prune = curve.time
        return bool(np.all(np.isfinite(self.tau))) and curve.time >= self.min_time - 1e-12

    def _prune(self, curve: CurveState) -> None:
        pts = curve.points
        depth_map = interior_depth(self.grid)
        idx = self.grid.cell_index(pts)
        depth = depth_map[idx[:, 0], idx[:, 1]]
        keep = np.ones(len(depth), dtype=bool)
        if self.prune_margin is not None:
            keep &= depth <= self.prune_margin
        if self.thin_cell is not None:
            keep &= _thin_mask(pts, self.thin_cell, self.thin_keep) | (depth <= self.thin_depth)
        if self.point_budget is not None and keep.sum() > self.point_budget:
            target = max(1, int(self.budget_slack * self.point_budget))
            order = np.argsort(depth, kind="stable")
            order = order[keep[order]][:target]
            keep = np.zeros(len(depth), dtype=bool)
            keep[order] = True
        self.pruned += prune(curve, keep)


def _thin_mask(pts: np.ndarray, cell: float, per_cell: int) -> np.ndarray:
    """Keep the first ``per_cell`` points (in curve order) of every coarse cell."""
    ij = np.floor(pts / cell).astype(np.int64)
    _, inverse = np.unique(ij, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(inverse, kind="stable")
    grp = inverse[order]
    starts = np.flatnonzero(np.r_[True, grp[1:] != grp[:-1]])
    rank = np.arange(len(grp)) - np.repeat(starts, np.diff(np.r_[starts, len(grp)]))
    mask = np.zeros(len(pts), dtype=bool)
    mask[order[rank < per_cell]] = True
    return mask


# --------------------------------------------------------------------------
# hitting and sweep times
# --------------------------------------------------------------------------


def hitting_time(trajectory: Trajectory, P, R: float, min_diameter: float = 1.0) -> HittingSample:
    """First snapshot with ``dist(curve, P) <= R`` and diameter at least ``min_diameter``."""
    if not trajectory.snapshots:
        raise ValueError("trajectory has no snapshots")
    if not R > 0:
        raise ValueError("R must be positive")
    P = np.asarray(P, dtype=float)
    for snap in trajectory.snapshots:
        if curve_distance(snap, P) <= R and diameter(snap.points) >= min_diameter:
            return HittingSample(tuple(P.tolist()), float(R), float(snap.time), False)
    return HittingSample(tuple(P.tolist()), float(R), float(trajectory.snapshots[-1].time), True)


def sweep_time(grid: SweptGrid, P, R: float) -> float:
    """First time every cell centred in ``K_R(P)`` is covered; ``inf`` if never."""
    if R < 2 * grid.cell_size:
        raise ValueError("sweep_time needs R >= 2 * cell_size")
    P = np.asarray(P, dtype=float)
    lo = grid.cell_index(P - R)
    hi = grid.cell_index(P + R)
    n = 2 * grid.extent
    if np.any(lo < 0) or np.any(hi >= n):
        return math.inf
    xs, ys = grid.cell_centers()
    sub = grid.first_cover_time[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1]
    dx = xs[lo[0] : hi[0] + 1, None] - P[0]
    dy = ys[None, lo[1] : hi[1] + 1] - P[1]
    inside = dx * dx + dy * dy <= R * R
    if not np.any(inside):
        return math.inf
    return float(sub[inside].max())


# --------------------------------------------------------------------------
# replica runs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FrontOptions:
    """Numerical settings for front-tracking replica runs.

    Tracked points deeper than ``prune_margin`` inside the swept region can
    no longer reach unswept territory before the front does and are
    dropped; points deeper than ``thin_depth`` are additionally thinned to
    ``thin_keep`` per ``thin_cell`` square.  ``point_budget`` is a hard cap
    enforced by depth order.
    """

    dt: float = 0.05
    cell_size: float = 0.25
    grid_extent: int = 64
    refine_threshold: float = 0.25
    prune_margin: float | None = 1.5
    prune_interval: float = 0.25
    thin_cell: float | None = 1.0
    thin_keep: int = 4
    thin_depth: float = 0.5
    point_budget: int | None = 1500
    max_points: int = 4000

    def scheme(self) -> StepScheme:
        return StepScheme(dt=self.dt)

    def to_record(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ReplicaResult:
    seed: int
    tau: np.ndarray
    stop_time: float
    max_points: int
    pruned: int
    grid: SweptGrid | None = None
    final: CurveState | None = None


def run_replica(
    family: CorrelationFamily,
    curve: CurveState,
    targets: Sequence[tuple[Sequence[float], float]],
    horizon: float,
    seed: int,
    options: FrontOptions = FrontOptions(),
    min_time: float = 0.0,
    keep_grid: bool = False,
) -> ReplicaResult:
    """Advect ``curve`` until every target is hit (and ``min_time`` passed) or ``horizon``."""
    grid = SweptGrid(cell_size=options.cell_size, extent=options.grid_extent)
    tracker = ReplicaTracker(
        targets,
        grid=grid,
        prune_margin=options.prune_margin,
        prune_interval=options.prune_interval,
        min_time=min_time,
        point_budget=options.point_budget,
        thin_cell=options.thin_cell,
        thin_keep=options.thin_keep,
        thin_depth=options.thin_depth,
    )
    traj = simulate_curve(
        family, curve, horizon, options.scheme(), seed,
        snapshot_stride=10**9, observer=tracker,
    )
    return ReplicaResult(
        seed=int(seed),
        tau=tracker.tau.copy(),
        stop_time=traj.final.time,
        max_points=tracker.max_points_seen,
        pruned=tracker.pruned,
        grid=grid if keep_grid else None,
        final=traj.final,
    )


def canonical_curve(R: float, options: FrontOptions = FrontOptions()) -> CurveState:
    """The circle ``∂K_R(0)``."""
    return CurveState.circle(
        (0.0, 0.0), R, refine_threshold=options.refine_threshold, max_points=options.max_points
    )


def unit_direction(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def direction_fan(k: int) -> np.ndarray:
    """``k`` equally spaced unit vectors starting at angle zero."""
    return np.stack([unit_direction(2 * math.pi * i / k) for i in range(k)])


def far_side_segment(R: float, v, options: FrontOptions = FrontOptions()) -> CurveState:
    """Unit segment perpendicular to ``v`` near ``-2R v``, inside ``K_{2R}(0)``.

    Among members of the class of large curves inside ``K_{2R}(0)`` this one
    starts as far as possible from targets in direction ``v`` with the least
    length, so its mean hitting time is a practical lower bound for the
    supremum over the class.
    """
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    n = np.array([-v[1], v[0]])
    c = 2 * R - 0.1
    if c * c + 0.25 > 4 * R * R:
        raise ValueError("R too small for a unit segment inside K_2R")
    mid = -c * v
    return CurveState.segment(
        mid - 0.5 * n, mid + 0.5 * n,
        refine_threshold=options.refine_threshold, max_points=options.max_points,
    )


@dataclass
class HittingTable:
    """Hitting times of one experiment: ``tau[replica, target]`` (``inf`` = censored)."""

    targets: list
    tau: np.ndarray
    seeds: np.ndarray
    horizon: float
    stop_times: np.ndarray
    max_points: np.ndarray

    def column(self, P, R: float) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        for k, (q, r) in enumerate(self.targets):
            if r == R and np.allclose(q, P):
                return self.tau[:, k]
        raise KeyError(f"no target {P.tolist()} with R={R}")

    def samples(self) -> list[HittingSample]:
        out = []
        for i in range(self.tau.shape[0]):
            for k, (q, r) in enumerate(self.targets):
                cens = not np.isfinite(self.tau[i, k])
                out.append(HittingSample(
                    tuple(np.asarray(q, float).tolist()), float(r),
                    self.horizon if cens else float(self.tau[i, k]), cens,
                    replica=i, seed=int(self.seeds[i]),
                ))
        return out

    @staticmethod
    def merge(parts: Sequence["HittingTable"]) -> "HittingTable":
        """Concatenate replica blocks (in the given order)."""
        first = parts[0]
        return HittingTable(
            first.targets,
            np.concatenate([p.tau for p in parts]),
            np.concatenate([p.seeds for p in parts]),
            first.horizon,
            np.concatenate([p.stop_times for p in parts]),
            np.concatenate([p.max_points for p in parts]),
        )


def replica_job(job):
    """Run one packed ``(family, curve, targets, horizon, seed, options, min_time, keep_grid)`` job."""
    family, curve, targets, horizon, seed, options, min_time, keep_grid = job
    res = run_replica(family, curve, targets, horizon, seed, options, min_time, keep_grid)
    res.final = None
    return res


def map_replicas(fn, jobs: Sequence, workers: int = 1) -> list:
    """Apply ``fn`` to every job, in a process pool when ``workers > 1``.

    Results come back in job order, so merging by replica index is
    independent of scheduling.
    """
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def collect_hitting(
    family: CorrelationFamily,
    curve_factory,
    targets_factory,
    replicas: int,
    seed: int,
    horizon: float,
    options: FrontOptions = FrontOptions(),
    replica_offset: int = 0,
    min_time: float = 0.0,
    grid_callback=None,
    workers: int = 1,
) -> HittingTable:
    """Run ``replicas`` independent replicas.

    ``curve_factory(i)`` and ``targets_factory(i)`` build the initial curve
    and target list of replica ``i`` (global index ``replica_offset + i``,
    whose stream is ``derive_seed(seed, index)``).  The target list must
    have the same length for every replica.  ``grid_callback(i, grid)``
    receives the swept raster when given.
    """
    jobs = []
    for i in range(replicas):
        idx = replica_offset + i
        jobs.append((
            family, curve_factory(idx), targets_factory(idx), horizon,
            derive_seed(seed, idx), options, min_time, grid_callback is not None,
        ))
    results = map_replicas(replica_job, jobs, workers)
    if grid_callback is not None:
        for i, res in enumerate(results):
            grid_callback(replica_offset + i, res.grid)
            res.grid = None
    target_meta = [(np.asarray(p, float), float(r)) for p, r in jobs[0][2]] if jobs else []
    return HittingTable(
        target_meta,
        np.array([r.tau for r in results], dtype=float).reshape(replicas, len(target_meta)),
        np.array([r.seed for r in results], dtype=np.uint64),
        float(horizon),
        np.array([r.stop_time for r in results], dtype=float),
        np.array([r.max_points for r in results], dtype=np.int64),
    )


# --------------------------------------------------------------------------
# stable norm
# --------------------------------------------------------------------------

CENSOR_LIMIT = 0.2


@dataclass
class PointEstimate:
    t: float
    mean: float
    std_error: float
    n: int
    censored_fraction: float
    used: bool
    note: str = ""

    def to_record(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SubadditivityRow:
    t1: float
    t2: float
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    slack: float
    passed: bool
    c12: float | None = None

    def to_record(self) -> dict:
        return dict(self.__dict__)


@dataclass
class StableNormEstimate:
    direction: np.ndarray
    R: float
    points: list
    slope: float
    slope_se: float
    intercept: float
    ci: tuple
    ball_radius: float
    reliable: bool
    notes: list = field(default_factory=list)
    subadditivity: list = field(default_factory=list)

    def means(self) -> dict:
        return {p.t: p.mean for p in self.points}

    def to_record(self) -> dict:
        return {
            "direction": np.asarray(self.direction).tolist(),
            "R": self.R,
            "points": [p.to_record() for p in self.points],
            "slope": self.slope,
            "slope_se": self.slope_se,
            "intercept": self.intercept,
            "ci": list(self.ci),
            "ball_radius": self.ball_radius,
            "reliable": self.reliable,
            "notes": list(self.notes),
            "subadditivity": [r.to_record() for r in self.subadditivity],
        }


def censored_mean(tau: np.ndarray, horizon: float) -> tuple[float, float, float]:
    """Mean and standard error with censored entries replaced by ``horizon``."""
    tau = np.asarray(tau, dtype=float)
    cens = ~np.isfinite(tau)
    x = np.where(cens, horizon, tau)
    n = len(x)
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return float(x.mean()), se, float(cens.mean())


def weighted_line(t, y, se, se_floor: float = 1e-9):
    """Inverse-variance weighted least squares ``y = a + s t``.

    Returns ``(s, se_s, a)``.
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    w = 1.0 / np.maximum(np.asarray(se, float), se_floor) ** 2
    tw = np.sum(w * t) / w.sum()
    yw = np.sum(w * y) / w.sum()
    sxx = np.sum(w * (t - tw) ** 2)
    if not sxx > 0:
        raise InsufficientDataError("need at least two distinct t values")
    s = np.sum(w * (t - tw) * (y - yw)) / sxx
    return float(s), float(1.0 / math.sqrt(sxx)), float(yw - s * tw)


def fit_stable_norm(
    t_grid: Sequence[float],
    tau: np.ndarray,
    R: float,
    direction,
    horizon: float,
    z: float = 1.96,
) -> StableNormEstimate:
    """Fit the stable norm from hitting times ``tau[replica, k]`` at ``t_grid[k] * v``.

    Censored entries (``inf``) count at the horizon when at most 20% of a
    column is censored; otherwise the column is dropped and the estimate is
    flagged unreliable.  Columns where every replica has ``tau == 0`` carry
    no slope information (the target is inside the reach of the initial
    curve) and are left out of the fit.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 3:
        raise ValueError("t_grid needs at least 3 entries")
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be increasing")
    tau = np.asarray(tau, dtype=float)
    if tau.shape[1] != len(t_grid):
        raise ValueError("tau columns must match t_grid")
    pts, notes = [], []
    reliable = True
    for k, t in enumerate(t_grid):
        col = tau[:, k]
        mean, se, cf = censored_mean(col, horizon)
        used, note = True, ""
        if cf > CENSOR_LIMIT:
            used, note, reliable = False, "censoring above 20%", False
        elif np.all(col == 0):
            used, note = False, "target within initial reach"
        pts.append(PointEstimate(float(t), mean, se, len(col), cf, used, note))
    fit_pts = [p for p in pts if p.used]
    if len(fit_pts) < 2:
        raise InsufficientDataError("fewer than two usable t values")
    s, s_se, a = weighted_line(
        [p.t for p in fit_pts], [p.mean for p in fit_pts], [p.std_error for p in fit_pts]
    )
    if not s > 0:
        reliable = False
        notes.append("non-positive slope")
    return StableNormEstimate(
        direction=np.asarray(direction, dtype=float),
        R=float(R),
        points=pts,
        slope=s,
        slope_se=s_se,
        intercept=a,
        ci=(s - z * s_se, s + z * s_se),
        ball_radius=1.0 / s if s > 0 else math.inf,
        reliable=reliable,
        notes=notes,
    )


def subadditivity_row(
    t1: float,
    t2: float,
    lhs_tau: np.ndarray,
    first_tau: np.ndarray,
    sup_tau: Sequence[np.ndarray],
    horizon: float,
    same_run_tau: np.ndarray | None = None,
    n_se: float = 2.0,
) -> SubadditivityRow:
    """One subadditivity comparison.

    ``lhs_tau`` are samples of the ``2R`` hitting time at ``(t1+t2) v``,
    ``first_tau`` of the ``R`` hitting time at ``t1 v`` and every entry of
    ``sup_tau`` samples the ``R`` hitting time at ``t2 v`` from one member
    of the class of large curves inside ``K_{2R}(0)``; their largest mean
    stands in for the supremum.  ``same_run_tau`` (the ``R`` hitting time
    at ``(t1+t2) v``) yields the empirical constant relating the two radii.
    """
    lm, ls, _ = censored_mean(lhs_tau, horizon)
    fm, fs, _ = censored_mean(first_tau, horizon)
    best = max((censored_mean(x, horizon) for x in sup_tau), key=lambda r: r[0])
    rhs = fm + best[0]
    rhs_se = math.hypot(fs, best[1])
    slack = n_se * math.hypot(ls, rhs_se)
    c12 = None
    if same_run_tau is not None:
        c12 = censored_mean(same_run_tau, horizon)[0] - lm
    return SubadditivityRow(
        float(t1), float(t2), lm, ls, rhs, rhs_se, slack, bool(lm <= rhs + slack), c12
    )


def estimate_stable_norm(
    family: CorrelationFamily,
    R: float,
    v,
    t_grid: Sequence[float],
    replicas: int,
    seed: int,
    options: FrontOptions = FrontOptions(),
    horizon: float | None = None,
    pairs: Sequence[tuple[float, float]] = (),
) -> StableNormEstimate:
    """Stable-norm estimate in direction ``v`` from the canonical circle ``∂K_R(0)``.

    ``pairs`` lists ``(t1, t2)`` combinations for the subadditivity
    diagnostics; they use the ``2R`` hitting times of the same runs and a
    separate far-side segment ensemble for the supremum term.
    """
    t_grid = [float(t) for t in t_grid]
    if len(t_grid) < 3:
        raise ValueError("t_grid needs at least 3 entries")
    if replicas < 32:
        raise ValueError("replicas must be at least 32")
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    horizon = horizon if horizon is not None else 4.0 * max(t_grid)
    sums = sorted({t1 + t2 for t1, t2 in pairs})
    targets = [(t * v, R) for t in t_grid] + [(t * v, 2 * R) for t in sums]
    table = collect_hitting(
        family, lambda i: canonical_curve(R, options), lambda i: targets,
        replicas, seed, horizon, options,
    )
    est = fit_stable_norm(t_grid, table.tau[:, : len(t_grid)], R, v, horizon)
    if pairs:
        t2s = sorted({t2 for _, t2 in pairs})
        seg = collect_hitting(
            family, lambda i: far_side_segment(R, v, options),
            lambda i: [(t * v, R) for t in t2s],
            replicas, seed, horizon, options, replica_offset=replicas,
        )
        est.subadditivity = subadditivity_checks(table, seg, R, v, pairs, t_grid)
    return est


def subadditivity_checks(canonical: HittingTable, far_side: HittingTable, R, v, pairs, t_grid):
    rows = []
    for t1, t2 in pairs:
        same = None
        if any(abs(t1 + t2 - t) < 1e-12 for t in t_grid):
            same = canonical.column((t1 + t2) * v, R)
        rows.append(subadditivity_row(
            t1, t2,
            canonical.column((t1 + t2) * v, 2 * R),
            canonical.column(t1 * v, R),
            [far_side.column(t2 * v, R)]
            + ([canonical.column(t2 * v, R)] if any(abs(t2 - t) < 1e-12 for t in t_grid) else []),
            canonical.horizon,
            same_run_tau=same,
        ))
    return rows


# --------------------------------------------------------------------------
# limit shape, tails, displacement, concentration
# --------------------------------------------------------------------------


@dataclass
class LimitShapeReport:
    t: float
    ball_radius: float
    eps: float
    inner_ok: bool
    outer_ok: bool
    inner_margin: float
    outer_margin: float

    @property
    def both(self) -> bool:
        return self.inner_ok and self.outer_ok

    def to_record(self) -> dict:
        return dict(self.__dict__)


def limit_shape_check(
    swept: SweptGrid, t: float, ball_radius: float, eps: float, center=(0.0, 0.0)
) -> LimitShapeReport:
    """Compare the raster swept by time ``t`` with the disks ``(1 ± eps) t B``.

    ``inner_margin`` is the distance from the inner circle to the nearest
    uncovered cell centre (positive when the inner disk is covered);
    ``outer_margin`` is the outer radius minus the farthest covered centre.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    r_in = (1 - eps) * t * ball_radius
    r_out = (1 + eps) * t * ball_radius
    xs, ys = swept.cell_centers()
    c = np.asarray(center, dtype=float)
    dist = np.hypot(xs[:, None] - c[0], ys[None, :] - c[1])
    cov = swept.covered_at(t)
    unc = dist[~cov]
    # cells outside the raster are uncovered
    edge = (swept.extent - 0.5) * swept.cell_size - float(np.max(np.abs(c - swept.origin)))
    nearest_unc = min(float(unc.min()) if unc.size else math.inf, edge + swept.cell_size)
    far_cov = float(dist[cov].max()) if np.any(cov) else 0.0
    inner_margin = nearest_unc - r_in
    outer_margin = r_out - far_cov
    return LimitShapeReport(
        float(t), float(ball_radius), float(eps),
        bool(inner_margin > 0 or r_in <= 0), bool(outer_margin >= 0),
        float(inner_margin), float(outer_margin),
    )


def swept_boundary(swept: SweptGrid, t: float | None = None) -> np.ndarray:
    """Centres of covered cells with at least one uncovered 4-neighbour."""
    cov = swept.covered if t is None else swept.covered_at(t)
    pad = np.pad(cov, 1, constant_values=False)
    interior = pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    bnd = cov & ~interior
    i, j = np.nonzero(bnd)
    xs, ys = swept.cell_centers()
    return np.column_stack([xs[i], ys[j]])


MIN_TAIL_SAMPLES = 200


@dataclass
class TailReport:
    n: int
    median: float
    survival_15: float
    survival_30: float
    exponent: float
    passed: bool
    curve: np.ndarray

    def to_record(self) -> dict:
        return {
            "n": self.n, "median": self.median,
            "survival_at_1.5_median": self.survival_15,
            "survival_at_3_median": self.survival_30,
            "exponent": self.exponent, "passed": self.passed,
        }


def _tau_values(samples) -> np.ndarray:
    if len(samples) and isinstance(samples[0], HittingSample):
        return np.array([s.tau for s in samples if not s.censored], dtype=float)
    x = np.asarray(samples, dtype=float)
    return x[np.isfinite(x)]


def tail_exponent(samples, t_ref: float) -> TailReport:
    """Survival of ``tau / t_ref`` and the fast-decay proxy.

    Passes when the survival at three times the median is at most a
    quarter of the survival at one and a half times the median.  The
    exponent is the negative log-log slope of the survival above the median.
    """
    x = _tau_values(samples) / t_ref
    n = len(x)
    if n < MIN_TAIL_SAMPLES:
        raise InsufficientDataError(f"need {MIN_TAIL_SAMPLES} uncensored samples, got {n}")
    xs = np.sort(x)
    surv = 1.0 - np.arange(1, n + 1) / n
    med = float(np.median(x))

    def S(a):
        return float(np.mean(x > a))

    s15, s30 = S(1.5 * med), S(3.0 * med)
    sel = (xs > med) & (surv > 0)
    if med > 0 and sel.sum() >= 3:
        slope = np.polyfit(np.log(xs[sel]), np.log(surv[sel]), 1)[0]
        expo = float(-slope)
    else:
        expo = math.nan
    passed = med > 0 and s30 <= 0.25 * s15
    return TailReport(n, med, s15, s30, expo, bool(passed), np.column_stack([xs, surv]))


@dataclass
class DisplacementReport:
    T: float
    initial_sup: float
    ratios_T: np.ndarray | None
    ratios_half: np.ndarray | None
    p95_T: float | None
    p95_half: float | None
    stable: bool | None

    def to_record(self) -> dict:
        return {
            "T": self.T, "initial_sup": self.initial_sup,
            "p95_T": self.p95_T, "p95_half": self.p95_half, "stable": self.stable,
            "ratios_T": None if self.ratios_T is None else self.ratios_T.tolist(),
            "ratios_half": None if self.ratios_half is None else self.ratios_half.tolist(),
        }


def _sup_norm_until(traj: Trajectory, T: float) -> float:
    return max(
        float(np.max(np.linalg.norm(s.points, axis=1))) for s in traj.snapshots if s.time <= T + 1e-12
    )


def displacement_bound(trajectories: Sequence[Trajectory], T: float) -> DisplacementReport:
    """Per-replica ``sup_{t<=T} max_x |Phi_t(x)| / T`` at ``T`` and ``T/2``."""
    init = max(float(np.max(np.linalg.norm(tr.snapshots[0].points, axis=1))) for tr in trajectories)
    if not T > 0:
        return DisplacementReport(float(T), init, None, None, None, None, None)
    rt = np.array([_sup_norm_until(tr, T) / T for tr in trajectories])
    rh = np.array([_sup_norm_until(tr, T / 2) / (T / 2) for tr in trajectories])
    p_t, p_h = float(np.percentile(rt, 95)), float(np.percentile(rh, 95))
    stable = abs(p_t - p_h) <= 0.5 * max(p_t, p_h)
    return DisplacementReport(float(T), init, rt, rh, p_t, p_h, bool(stable))


@dataclass
class ConcentrationReport:
    t_grid: list
    dispersion: list
    std_error: list
    slope: float
    inversions: int
    passed: bool

    def to_record(self) -> dict:
        return dict(self.__dict__)


def concentration_check(tau_columns: Sequence[np.ndarray], t_grid: Sequence[float], slope: float,
                        band: float = 0.25) -> ConcentrationReport:
    """Empirical ``P[|tau/t - slope| > band * slope]`` per ``t``.

    Censored samples count as deviations.  Passes when the sequence is
    nonincreasing except for at most one rise within one combined standard
    error, and the last value is strictly below the first (or all vanish).
    """
    if not slope > 0:
        raise ValueError("slope must be positive")
    disp, ses = [], []
    for t, col in zip(t_grid, tau_columns):
        col = np.asarray(col, dtype=float)
        dev = ~np.isfinite(col) | (np.abs(col / t - slope) > band * slope)
        p = float(dev.mean())
        disp.append(p)
        ses.append(math.sqrt(p * (1 - p) / len(col)))
    inv, ok = 0, True
    for k in range(len(disp) - 1):
        rise = disp[k + 1] - disp[k]
        if rise > 0:
            inv += 1
            if rise > math.hypot(ses[k], ses[k + 1]):
                ok = False
    ok = ok and inv <= 1 and (disp[-1] < disp[0] or max(disp) == 0)
    return ConcentrationReport([float(t) for t in t_grid], disp, ses, float(slope), inv, bool(ok))

"""Deterministic control fields from the reproducing kernel of the flow.

``V_k(x) = b(x - Q)[:, k]`` equals the unit vector ``e_k`` at ``Q`` and
deviates from it quadratically.  On a small enough square around ``Q`` the
two fields act almost like constant translations, which lets a three-piece
schedule (down, right, up) drag a short curve across the square and sweep
it completely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .covariance import CorrelationFamily, eval_tensor

DEFAULT_N = 102
C13_SAFETY = 1.1
C13_GRID = 100  # radii x angles on the estimation disc
# round-off allowance per integration step, in units of machine epsilon
ROUNDOFF_ULPS = 64


class IntegrationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ControlField:
    base_point: tuple
    component: int
    family: CorrelationFamily
    sign: int = 1

    def __post_init__(self):
        if self.component not in (1, 2):
            raise ValueError("component must be 1 or 2")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    def __call__(self, x) -> np.ndarray:
        return eval_control(self, x)

    def label(self) -> str:
        return f"{'+' if self.sign > 0 else '-'}V{self.component}"


def eval_control(fld: ControlField, x) -> np.ndarray:
    """``sign * b(x - Q)[:, k]``; ``x`` may be a point or an ``(..., 2)`` array."""
    x = np.asarray(x, dtype=float)
    b = eval_tensor(fld.family, x - np.asarray(fld.base_point, dtype=float))
    return fld.sign * b[..., :, fld.component - 1]


@dataclass(frozen=True)
class SquareChart:
    Q: tuple
    n: int
    eps: float
    C13: float
    t_u: float
    delta: float
    family: CorrelationFamily
    max_field_deviation: float = float("nan")

    def Z(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - np.asarray(self.Q)) / self.eps

    def Z_inv(self, z) -> np.ndarray:
        return np.asarray(self.Q) + self.eps * np.asarray(z, dtype=float)

    def field(self, k: int, sign: int = 1) -> ControlField:
        return ControlField(tuple(self.Q), k, self.family, sign)

    def to_record(self) -> dict:
        return dict(Q=list(self.Q), n=self.n, eps=self.eps, C13=self.C13, t_u=self.t_u,
                    delta=self.delta, max_field_deviation=self.max_field_deviation)


def _deviation(family, Q, x):
    """max over k of ``||V_k(x) - e_k||`` for points ``x`` of shape ``(m, 2)``."""
    b = eval_tensor(family, x - Q)
    return np.linalg.norm(b - np.eye(2), axis=-2).max(axis=-1)


def estimate_C13(family: CorrelationFamily, Q, radius: float, n_grid: int = C13_GRID) -> float:
    """Largest ``||V(x) - w|| / ||x - Q||^2`` on a polar grid of the disc (``n_grid**2`` points)."""
    Q = np.asarray(Q, dtype=float)
    r = np.linspace(radius / n_grid, radius, n_grid)
    ang = np.linspace(0, 2 * np.pi, n_grid, endpoint=False)
    rr, aa = np.meshgrid(r, ang, indexing="ij")
    pts = Q + np.stack([rr * np.cos(aa), rr * np.sin(aa)], axis=-1).reshape(-1, 2)
    ratio = _deviation(family, Q, pts) / rr.ravel() ** 2
    return float(ratio.max())


def square_grid(Q, half_width: float, m: int) -> np.ndarray:
    """``m x m`` grid of points on the closed square of the given half-width."""
    u = np.linspace(-half_width, half_width, m)
    gx, gy = np.meshgrid(u, u, indexing="ij")
    return np.asarray(Q, dtype=float) + np.column_stack([gx.ravel(), gy.ravel()])


def build_square(family: CorrelationFamily, Q=(0.0, 0.0), n: int = DEFAULT_N) -> SquareChart:
    if n < 1:
        raise ValueError("n must be a positive integer")
    if family.dimension != 2:
        raise ValueError("the square chart is planar")
    Q = np.asarray(Q, dtype=float)
    delta = family.length_scale / 2
    C13 = C13_SAFETY * estimate_C13(family, Q, delta)
    eps = min(delta / (math.sqrt(2) * n), 1.0 / (2 * C13 * n * n), 1.0 / 102)
    if eps <= 1e-12:
        raise ValueError(f"degenerate chart: eps={eps:.3e}")
    pts = square_grid(Q, n * eps, 101)
    b = eval_tensor(family, pts - Q)
    speed = np.linalg.norm(b, axis=-2).max()
    t_u = (n * eps / 2) / float(speed)
    dev = float(_deviation(family, Q, pts).max())
    return SquareChart(tuple(Q.tolist()), n, eps, C13, t_u, delta, family, dev)


@dataclass(frozen=True)
class ControlSchedule:
    segments: tuple  # of (duration, ControlField)

    def __post_init__(self):
        for dur, _ in self.segments:
            if not dur > 0:
                raise ValueError("segment durations must be positive")

    @property
    def T(self) -> float:
        return float(sum(d for d, _ in self.segments))

    def boundaries(self) -> list[float]:
        out, t = [0.0], 0.0
        for d, _ in self.segments:
            t += d
            out.append(t)
        return out


def sweeping_schedule(chart: SquareChart) -> ControlSchedule:
    """Down for 10 eps, right for 4 eps, up for 20 eps."""
    e = chart.eps
    return ControlSchedule((
        (10 * e, chart.field(2, -1)),
        (4 * e, chart.field(1, +1)),
        (20 * e, chart.field(2, +1)),
    ))


def _rk4_step(fn, x, h):
    k1 = fn(x)
    k2 = fn(x + 0.5 * h * k1)
    k3 = fn(x + 0.5 * h * k2)
    k4 = fn(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class ControlPath:
    times: np.ndarray
    states: np.ndarray  # (len(times), m, 2)
    steps: int

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.states[k]


def integrate_control(
    schedule: ControlSchedule,
    x0,
    dt: float,
    record: Sequence[float] | None = None,
    observer: Callable[[float, np.ndarray], None] | None = None,
    min_eps: float | None = None,
) -> ControlPath:
    """Classical RK4 through a piecewise-constant schedule.

    Each segment is cut into a whole number of steps no longer than ``dt``,
    so segment boundaries are hit exactly.  States are stored at the
    schedule boundaries and at the requested ``record`` times (rounded to
    the nearest step).  ``observer(t, x)`` sees every step.
    """
    if min_eps is not None and dt > min_eps / 100 * (1 + 1e-12):
        raise ValueError("dt must not exceed eps/100")
    x = np.array(x0, dtype=float, copy=True)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    want = sorted(set(record or []))
    times, states = [0.0], [x.copy()]
    t0, steps = 0.0, 0
    if observer is not None:
        observer(0.0, x)
    for dur, fld in schedule.segments:
        n = max(1, math.ceil(dur / dt - 1e-9))
        h = dur / n
        fn = fld.__call__
        for j in range(1, n + 1):
            x = _rk4_step(fn, x, h)
            steps += 1
            t = t0 + j * h
            if not np.all(np.isfinite(x)):
                raise IntegrationError(f"non-finite state at t={t:.6g}")
            if observer is not None:
                observer(t, x)
            while want and want[0] <= t + 0.5 * h:
                if want[0] > t - 0.5 * h:
                    times.append(t)
                    states.append(x.copy())
                want.pop(0)
        t0 += dur
        if times[-1] != t0:
            times.append(t0)
            states.append(x.copy())
    st = np.array(states)
    if single:
        st = st[:, 0, :]
    return ControlPath(np.array(times), st, steps)


def integration_tolerance(dt: float, t: float, steps: int, scale: float = 1.0) -> float:
    """Error allowance: ``10 dt^4`` per unit time plus accumulated round-off."""
    return 10 * dt**4 * t + ROUNDOFF_ULPS * np.finfo(float).eps * steps * (1 + scale)


@dataclass
class NospeedReport:
    passed: bool
    max_violation: float
    checks: int
    violations: int
    times: list
    deviations: np.ndarray = field(repr=False, default=None)
    points: np.ndarray = field(repr=False, default=None)

    def to_record(self) -> dict:
        return dict(passed=self.passed, max_violation=self.max_violation, checks=self.checks,
                    violations=self.violations, times=self.times)


def nospeed_certificate(chart: SquareChart, dt: float | None = None, grid_size: int = 21) -> NospeedReport:
    """Check ``||psi_t(z) - z - t w|| <= eps t`` on a grid of the half-square.

    ``deviations`` has shape ``(2 fields, 3 times, grid_size**2)``.
    """
    dt = chart.eps / 200 if dt is None else dt
    half = chart.n * chart.eps / 2
    # open half-square: stay strictly inside
    z = square_grid(chart.Q, half * (1 - 1e-9), grid_size)
    times = [chart.t_u / 4, chart.t_u / 2, chart.t_u]
    scale = float(np.abs(z).max())
    devs = np.zeros((2, 3, len(z)))
    worst, nviol = -np.inf, 0
    for k in (1, 2):
        fld = chart.field(k)
        w = np.eye(2)[k - 1]
        path = integrate_control(ControlSchedule(((chart.t_u, fld),)), z, dt, record=times)
        steps_per = path.steps / chart.t_u
        for j, t in enumerate(times):
            x = path.at(t)
            dev = np.linalg.norm(x - z - t * w, axis=1)
            devs[k - 1, j] = dev
            excess = dev - (chart.eps * t + integration_tolerance(dt, t, int(steps_per * t) + 1, scale))
            worst = max(worst, float(excess.max()))
            nviol += int(np.sum(excess > 0))
    return NospeedReport(nviol == 0, worst, devs.size, nviol, times, devs, z)


# coordinate table checked by the sweep certificate: time multiple of eps ->
# (Z1 range, Z2 range) for all curve points
SWEEP_TABLE = {
    0: ((-7.0, -1.0), (-7.0, 7.0)),
    10: ((-7 - 1 / 3, -1 + 1 / 3), (-17 - 1 / 3, -3 + 1 / 3)),
    14: ((-3 - 2 / 3, 3 + 2 / 3), (-17 - 2 / 3, -3 + 2 / 3)),
    34: ((-4.0, 4.0), (2.0, 18.0)),
}
# Z1 ranges of the endpoint started at Z1 = -7 and the one started at Z1 = -1
ENDPOINT_TABLE = {
    0: ((-7.0, -7.0), (-1.0, -1.0)),
    10: ((-7 - 1 / 3, -7 + 1 / 3), (-1 - 1 / 3, -1 + 1 / 3)),
    14: ((-3 - 2 / 3, -3 + 2 / 3), (3 - 2 / 3, 3 + 2 / 3)),
    34: ((-4.0, -2.0), (2.0, 4.0)),
}


@dataclass
class SweepReport:
    passed: bool
    precondition_ok: bool
    messages: list
    table_ok: dict
    endpoint_ok: dict
    coverage: float
    uncovered_cells: list
    clearance: float
    tolerance_z: float
    swept_cells: np.ndarray = field(repr=False, default=None)

    def to_record(self) -> dict:
        return dict(
            passed=self.passed, precondition_ok=self.precondition_ok, messages=self.messages,
            table_ok={str(k): v for k, v in self.table_ok.items()},
            endpoint_ok={str(k): v for k, v in self.endpoint_ok.items()},
            coverage=self.coverage, uncovered_cells=self.uncovered_cells,
            clearance=self.clearance, tolerance_z=self.tolerance_z,
        )


def straight_test_curve(chart: SquareChart, points: int = 61) -> np.ndarray:
    z = np.column_stack([np.linspace(-7, -1, points), np.zeros(points)])
    return chart.Z_inv(z)


def sweep_certificate(chart: SquareChart, test_curve, dt: float | None = None) -> SweepReport:
    """Run the sweeping schedule on ``test_curve`` and audit the result.

    ``test_curve`` is an ``(m, 2)`` polyline in original coordinates whose
    first point sits on ``Z1 = -7`` and last point on ``Z1 = -1``.
    Coverage is measured on ``Z^{-1}([-2, 2]^2)`` at cell size ``eps / 4``.
    """
    dt = chart.eps / 200 if dt is None else dt
    curve = np.asarray(test_curve, dtype=float)
    z0 = chart.Z(curve)
    msgs = []
    tiny = 1e-9
    pre = True
    if np.any(np.abs(z0) > 7 + tiny):
        pre = False
        msgs.append("test curve leaves Z^-1([-7,7]^2)")
    if z0[:, 0].max() < -1 - tiny or z0[:, 0].min() > -7 + tiny:
        pre = False
        msgs.append("test curve does not link Z1=-7 to Z1=-1")
    if np.any(z0[:, 0] > -1 + tiny) or np.any(z0[:, 0] < -7 - tiny):
        pre = False
        msgs.append("test curve leaves the strip -7 <= Z1 <= -1")
    if abs(z0[0, 0] + 7) > tiny or abs(z0[-1, 0] + 1) > tiny:
        pre = False
        msgs.append("endpoints must lie on Z1=-7 and Z1=-1")
    if not pre:
        return SweepReport(False, False, msgs, {}, {}, 0.0, [], float("nan"), float("nan"))

    sched = sweeping_schedule(chart)
    e = chart.eps
    cell = 0.25  # eps / 4 in chart units
    ncell = 16
    covered = np.zeros((ncell, ncell), dtype=bool)
    clearance = [np.inf]
    sweep_start = 14 * e * (1 - 1e-12)

    def mark(t, x):
        if t < sweep_start:
            return
        z = chart.Z(x)
        seg = np.diff(z, axis=0)
        k = np.maximum(np.ceil(np.linalg.norm(seg, axis=1) / (cell / 3)).astype(int), 1)
        samples = [z[-1:]]
        for j in np.flatnonzero(k):
            u = np.arange(k[j])[:, None] / k[j]
            samples.append(z[j] + u * seg[j])
        s = np.concatenate(samples)
        idx = np.floor((s + 2.0) / cell).astype(int)
        ok = np.all((idx >= 0) & (idx < ncell), axis=1)
        covered[idx[ok, 0], idx[ok, 1]] = True
        # endpoints trace the sides of the swept band
        for p in (z[0], z[-1]):
            clearance[0] = min(clearance[0], _box_distance(p, 1.0))

    state = {"last": -1}

    def observer(t, x):
        state["last"] += 1
        if state["last"] % 4 == 0 or t >= sched.T * (1 - 1e-12):
            mark(t, x)

    checkpoints = [0.0, 10 * e, 14 * e, 34 * e]
    path = integrate_control(sched, curve, dt, record=checkpoints, observer=observer)
    steps_total = path.steps
    tol_x = integration_tolerance(dt, sched.T, steps_total, float(np.abs(curve).max()))
    tol_z = tol_x / e
    table_ok, end_ok = {}, {}
    for mult, t in zip((0, 10, 14, 34), checkpoints):
        z = chart.Z(path.at(t))
        (a1, b1), (a2, b2) = SWEEP_TABLE[mult]
        ok = bool(
            z[:, 0].min() >= a1 - tol_z and z[:, 0].max() <= b1 + tol_z
            and z[:, 1].min() >= a2 - tol_z and z[:, 1].max() <= b2 + tol_z
        )
        table_ok[mult] = ok
        (za, zb), (ya, yb) = ENDPOINT_TABLE[mult]
        end_ok[mult] = bool(
            za - tol_z <= z[0, 0] <= zb + tol_z and ya - tol_z <= z[-1, 0] <= yb + tol_z
        )
        if not ok:
            msgs.append(f"coordinate table violated at t={mult} eps")
        if not end_ok[mult]:
            msgs.append(f"endpoint table violated at t={mult} eps")
    # the curve itself at the start and end of the sweep bounds the swept band
    for t in (14 * e, 34 * e):
        z = chart.Z(path.at(t))
        clearance[0] = min(clearance[0], min(_box_distance(p, 1.0) for p in z))
    uncovered = [
        [float(-2 + (i + 0.5) * cell), float(-2 + (j + 0.5) * cell)]
        for i, j in zip(*np.nonzero(~covered))
    ]
    coverage = float(covered.mean())
    if uncovered:
        msgs.append(f"{len(uncovered)} raster cells of Z^-1([-2,2]^2) not swept")
    if clearance[0] < 1 - tol_z:
        msgs.append(f"sweep boundary only {clearance[0]:.3f} from Z^-1([-1,1]^2)")
    passed = all(table_ok.values()) and all(end_ok.values()) and not uncovered and clearance[0] >= 1 - tol_z
    return SweepReport(passed, True, msgs, table_ok, end_ok, coverage, uncovered,
                       float(clearance[0]), float(tol_z), covered)


def _box_distance(p, half: float) -> float:
    """Euclidean distance from ``p`` to the square ``[-half, half]^2``."""
    d = np.maximum(np.abs(p) - half, 0.0)
    return float(np.hypot(d[0], d[1]))

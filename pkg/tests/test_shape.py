from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ibflab.covariance import POTENTIAL, CorrelationFamily
from ibflab.flow import CurveState, PointCloud, StepScheme, Trajectory, simulate_curve
from ibflab.shape import (
    FrontOptions, HittingSample, HittingTable, InsufficientDataError, SweptGrid, accumulate_swept,
    canonical_curve, censored_mean, collect_hitting, concentration_check, direction_fan,
    displacement_bound, far_side_segment, fit_stable_norm, hitting_time, interior_depth,
    limit_shape_check, run_replica, subadditivity_row, sweep_time, swept_boundary, tail_exponent,
    weighted_line, estimate_stable_norm,
)

SOL = CorrelationFamily()


def snap(points, t=0.0, closed=False):
    return CurveState(PointCloud(np.asarray(points, float), t), closed=closed)


def disk_grid(radius, cell=0.25, extent=64):
    g = SweptGrid(cell_size=cell, extent=extent)
    xs, ys = g.cell_centers()
    inside = np.hypot(xs[:, None], ys[None, :]) <= radius
    g.first_cover_time[inside] = 0.0
    return g


# --- swept raster ---------------------------------------------------------

def test_diagonal_unit_segment_cell_count():
    g = SweptGrid(cell_size=0.1, extent=32)
    d = 1 / math.sqrt(2)
    accumulate_swept(g, snap([[0.013, 0.027], [0.013 + d, 0.027 + d]]))
    assert 10 <= g.covered.sum() <= 21


def test_single_snapshot_and_idempotence():
    g = SweptGrid(cell_size=0.25, extent=8)
    s = snap([[-1.0, 0.1], [1.0, 0.1]], t=0.5)
    accumulate_swept(g, s)
    first = g.first_cover_time.copy()
    assert g.covered.sum() == 9  # 2 / 0.25 cells plus the endpoint cell
    assert set(np.unique(first[np.isfinite(first)])) == {0.5}
    accumulate_swept(g, s)
    np.testing.assert_array_equal(g.first_cover_time, first)


def test_grid_grows_when_needed():
    g = SweptGrid(cell_size=0.5, extent=4)
    accumulate_swept(g, snap([[0.0, 0.0], [10.0, 0.0]]))
    assert g.extent >= 21 and g.growth_log
    assert g.covered.sum() == 21


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)),
                min_size=1, max_size=6))
@settings(max_examples=40, deadline=None)
def test_monotone_accumulation(segs):
    g = SweptGrid(cell_size=0.3, extent=8)
    before = g.covered.copy()
    for k, (a, b, c, d) in enumerate(segs):
        accumulate_swept(g, snap([[a, b], [c, d]], t=float(k)))
        now = g.covered
        pad = now.shape[0] - before.shape[0]
        if pad:
            before = np.pad(before, pad // 2)
        assert np.all(now[before])
        before = now.copy()
    t = g.first_cover_time
    assert np.all((t >= 0) | ~np.isfinite(t))


def test_interior_depth_of_disk():
    g = disk_grid(3.0)
    depth = interior_depth(g)
    xs, ys = g.cell_centers()
    i = np.argmin(np.abs(xs - 0.125))
    assert depth[i, i] == pytest.approx(3.0, abs=0.5)


# --- hitting and sweep times -------------------------------------------------

def test_hitting_time_examples():
    traj = Trajectory(snapshots=[snap([[-0.5, 0], [0.5, 0]], 0.0), snap([[-0.5, 0], [0.6, 0]], 1.0)])
    hit = hitting_time(traj, (1.0, 0.0), 1.0)
    assert hit.tau == 0.0 and not hit.censored
    far = hitting_time(traj, (50.0, 0.0), 1.0)
    assert far.censored and far.tau == 1.0
    small = Trajectory(snapshots=[snap([[-0.1, 0], [0.1, 0]], 0.0), snap([[-0.1, 0], [0.95, 0]], 0.5)])
    # the diameter clause delays the hit until the curve is large
    assert hitting_time(small, (0.0, 0.0), 1.0).tau == 0.5
    with pytest.raises(ValueError):
        hitting_time(Trajectory(snapshots=[]), (0, 0), 1.0)


def test_sweep_time_examples():
    g = SweptGrid(cell_size=0.25, extent=16)
    with pytest.raises(ValueError):
        sweep_time(g, (0, 0), 0.4)
    assert sweep_time(g, (0, 0), 1.0) == math.inf
    assert sweep_time(g, (100, 0), 1.0) == math.inf
    d = disk_grid(2.0, extent=16)
    assert sweep_time(d, (0.5, 0.0), 1.0) == 0.0


def test_sweep_not_before_hit():
    opts = FrontOptions()
    targets = [((3.0, 0.0), 1.0), ((0.0, -3.5), 1.0)]
    for seed in range(3):
        res = run_replica(SOL, canonical_curve(1.0, opts), targets, 8.0, seed, opts,
                          min_time=8.0, keep_grid=True)
        for (P, R), tau in zip(targets, res.tau):
            assert sweep_time(res.grid, P, R) >= tau


def test_hitting_sample_record():
    rec = HittingSample((1.0, 2.0), 2.0, 5.0, True, replica=3, seed=9).to_record()
    assert rec["tau"] is None and rec["censored"] and rec["replica"] == 3


def test_run_replica_deterministic():
    opts = FrontOptions()
    t = [((4.0, 0.0), 2.0)]
    a = run_replica(SOL, canonical_curve(2.0, opts), t, 10.0, 17, opts)
    b = run_replica(SOL, canonical_curve(2.0, opts), t, 10.0, 17, opts)
    np.testing.assert_array_equal(a.tau, b.tau)
    assert a.stop_time == b.stop_time


def test_censoring_rare_at_moderate_distance():
    opts = FrontOptions()
    table = collect_hitting(SOL, lambda i: canonical_curve(2.0, opts), lambda i: [((5.0, 0.0), 2.0)],
                            128, 31, 20.0, opts)
    assert np.mean(~np.isfinite(table.tau)) < 0.05


def test_sweep_gap_stable_in_horizon():
    opts = FrontOptions()
    P, R = np.array([3.0, 0.0]), 1.0
    gaps = []
    for seed in range(32):
        res = run_replica(SOL, canonical_curve(1.0, opts), [(P, R)], 12.0, 500 + seed, opts,
                          min_time=12.0, keep_grid=True)
        gaps.append((res.tau[0], sweep_time(res.grid, P, R)))
    hit, sw = np.array(gaps).T
    assert np.all(sw >= hit)
    # censor at two horizons; the median gap must be finite and agree
    med = []
    for h in (8.0, 12.0):
        g = np.where(sw <= h, sw - hit, np.inf)
        med.append(float(np.median(g)))
    assert all(np.isfinite(med))
    assert abs(med[0] - med[1]) <= 0.5 * max(med) + 0.25


def test_collect_hitting_merge_by_index():
    opts = FrontOptions()
    args = (SOL, lambda i: canonical_curve(2.0, opts), lambda i: [((4.0, 0.0), 2.0)])
    whole = collect_hitting(*args, 6, 3, 10.0, opts)
    parts = [collect_hitting(*args, 3, 3, 10.0, opts, replica_offset=k) for k in (0, 3)]
    merged = HittingTable.merge(parts)
    np.testing.assert_array_equal(whole.tau, merged.tau)
    np.testing.assert_array_equal(whole.seeds, merged.seeds)
    assert len(whole.samples()) == 6


def test_collect_hitting_independent_of_workers():
    opts = FrontOptions()
    args = (SOL, lambda i: canonical_curve(2.0, opts), lambda i: [((6.0, 0.0), 2.0)])
    one = collect_hitting(*args, 4, 8, 6.0, opts)
    two = collect_hitting(*args, 4, 8, 6.0, opts, workers=2)
    np.testing.assert_array_equal(one.tau, two.tau)
    assert np.any(one.tau > 0)


def test_geometry_helpers():
    fan = direction_fan(8)
    np.testing.assert_allclose(np.linalg.norm(fan, axis=1), 1.0)
    np.testing.assert_allclose(fan[2], [0.0, 1.0], atol=1e-15)
    c = canonical_curve(2.0)
    np.testing.assert_allclose(np.linalg.norm(c.points, axis=1), 2.0)
    seg = far_side_segment(2.0, (1.0, 0.0))
    assert np.all(np.linalg.norm(seg.points, axis=1) <= 4.0)
    np.testing.assert_allclose(seg.points[:, 0], -3.9)
    assert np.ptp(seg.points[:, 1]) == pytest.approx(1.0)


# --- stable norm ---------------------------------------------------------------

def test_censored_mean_and_weighted_line():
    m, se, cf = censored_mean(np.array([1.0, 3.0, np.inf, 2.0]), 10.0)
    assert m == 4.0 and cf == 0.25
    s, s_se, a = weighted_line([1, 2, 3], [3, 5, 7], [0.1, 0.1, 0.1])
    assert (s, a) == (pytest.approx(2.0), pytest.approx(1.0))
    with pytest.raises(InsufficientDataError):
        weighted_line([1, 1], [1, 2], [1, 1])


def test_fit_stable_norm_synthetic():
    rng = np.random.default_rng(0)
    t = np.array([4.0, 6.0, 8.0, 10.0])
    tau = 1.2 * t[None, :] - 2.0 + rng.normal(0, 0.5, (200, 4))
    tau[:, 0] = 0.0  # target inside the reach of the initial curve
    est = fit_stable_norm(t, tau, 2.0, (1, 0), 40.0)
    assert not est.points[0].used and est.points[0].note
    assert est.slope == pytest.approx(1.2, abs=0.05)
    assert est.ball_radius == pytest.approx(1 / est.slope)
    assert est.reliable and est.ci[0] < est.slope < est.ci[1]
    assert all(p.mean >= 0 for p in est.points)


def test_fit_stable_norm_censoring_and_preconditions():
    t = [4.0, 6.0, 8.0]
    tau = np.tile([4.0, 6.0, 8.0], (10, 1)) + np.arange(10)[:, None] * 0.1
    tau[:3, 2] = np.inf
    est = fit_stable_norm(t, tau, 2.0, (1, 0), 9.0)
    assert not est.reliable and not est.points[2].used
    with pytest.raises(ValueError):
        fit_stable_norm([4.0], tau[:, :1], 2.0, (1, 0), 9.0)
    with pytest.raises(ValueError):
        fit_stable_norm([4.0, 3.0, 5.0], tau, 2.0, (1, 0), 9.0)


def test_estimate_stable_norm_preconditions():
    with pytest.raises(ValueError):
        estimate_stable_norm(SOL, 2.0, (1, 0), [8.0], 64, 1)
    with pytest.raises(ValueError):
        estimate_stable_norm(SOL, 2.0, (1, 0), [4.0, 6.0, 8.0], 16, 1)


def test_subadditivity_row():
    lhs = np.full(50, 5.0) + np.linspace(-1, 1, 50)
    row = subadditivity_row(4, 4, lhs, np.full(50, 2.0), [np.full(50, 2.5), np.full(50, 3.0)], 40.0,
                            same_run_tau=np.full(50, 6.0))
    assert row.passed and row.rhs == 5.0 and row.c12 == pytest.approx(1.0)
    bad = subadditivity_row(4, 4, lhs + 10, np.full(50, 2.0), [np.full(50, 3.0)], 40.0)
    assert not bad.passed and bad.c12 is None


# --- limit shape, tails, displacement, concentration ----------------------

def test_limit_shape_examples():
    g = disk_grid(8.0)
    rep = limit_shape_check(g, 8.0, 1.0, 0.05)
    assert rep.both
    assert limit_shape_check(g, 0.0, 1.0, 0.3).inner_ok
    assert not limit_shape_check(g, 8.0, 0.5, 0.3).outer_ok
    assert not limit_shape_check(g, 8.0, 1.5, 0.3).inner_ok
    with pytest.raises(ValueError):
        limit_shape_check(g, 8.0, 1.0, 1.0)


def test_swept_boundary_ring():
    b = swept_boundary(disk_grid(4.0))
    r = np.hypot(b[:, 0], b[:, 1])
    assert np.all((r > 3.4) & (r <= 4.0))


def test_tail_controls():
    rng = np.random.default_rng(1)
    # an exponential tail sits above the proxy: S(3m) / S(1.5m) = 2 ** -1.5
    exp_rep = tail_exponent(rng.exponential(1.0, 4000), 1.0)
    assert exp_rep.survival_30 / exp_rep.survival_15 == pytest.approx(2**-1.5, abs=0.04)
    assert not exp_rep.passed
    assert tail_exponent(np.abs(rng.normal(0, 1, 1000)), 1.0).passed
    pareto = 1.0 / rng.uniform(0, 1, 1000)  # Pareto with alpha = 1
    assert not tail_exponent(pareto, 1.0).passed
    with pytest.raises(InsufficientDataError):
        tail_exponent(np.ones(199), 1.0)
    s = [HittingSample((0, 0), 1.0, float(x), False) for x in rng.exponential(1.0, 300)]
    s.append(HittingSample((0, 0), 1.0, 50.0, True))
    assert tail_exponent(s, 2.0).n == 300


def test_displacement_bound():
    c = CurveState.segment((-0.5, 0), (0.5, 0), max_points=64)
    trajs = [simulate_curve(SOL, c, 4.0, StepScheme(dt=0.05), s, snapshot_stride=4) for s in range(16)]
    zero = displacement_bound(trajs, 0.0)
    assert zero.initial_sup == pytest.approx(0.5) and zero.stable is None and zero.p95_T is None
    rep = displacement_bound(trajs, 4.0)
    assert rep.ratios_T.shape == (16,) and rep.stable
    pot = CorrelationFamily(kind=POTENTIAL)
    ptraj = [simulate_curve(pot, c, 4.0, StepScheme(dt=0.05), s, snapshot_stride=4) for s in range(16)]
    assert displacement_bound(ptraj, 4.0).stable


def test_concentration_controls():
    t = [4.0, 6.0, 8.0, 10.0]
    exact = [np.full(64, 1.2 * x) for x in t]
    rep = concentration_check(exact, t, 1.2)
    assert rep.dispersion == [0.0] * 4 and rep.passed
    rng = np.random.default_rng(2)
    shrinking = [1.2 * x + rng.normal(0, 3.0, 400) for x in t]
    assert concentration_check(shrinking, t, 1.2).passed
    growing = [1.2 * x + rng.normal(0, 0.05 * x * x, 400) for x in t]
    assert not concentration_check(growing, t, 1.2).passed
    with pytest.raises(ValueError):
        concentration_check(exact, t, 0.0)

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ibflab.covariance import (
    MIXTURE, POTENTIAL, TAYLOR_GRID_SPAN, CorrelationFamily, DegeneratePointError, DomainError,
    block_covariance, eval_correlations, eval_tensor, lyapunov_exponents, spectrum_report,
    taylor_remainder, taylor_radius, two_point_matrix, validate_family,
)

SOL = CorrelationFamily()
POT = CorrelationFamily(kind=POTENTIAL)
MIX = CorrelationFamily(kind=MIXTURE, mix_weight=0.5)
E_HALF = math.exp(-0.5)

coord = st.floats(-6, 6, allow_nan=False)
point = st.tuples(coord, coord)
families = st.sampled_from([SOL, POT, MIX, CorrelationFamily(length_scale=0.7),
                            CorrelationFamily(kind=MIXTURE, mix_weight=0.2, length_scale=1.6)])


def rotation(a):
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def test_values_at_zero():
    for fam in (SOL, POT, MIX):
        bl, dbl, d2bl, bn, dbn, d2bn = eval_correlations(fam, 0.0)
        assert (bl, dbl, bn, dbn) == (1.0, 0.0, 1.0, 0.0)
        assert d2bl == pytest.approx(-fam.beta_L, abs=1e-15)
        assert d2bn == pytest.approx(-fam.beta_N, abs=1e-15)


def test_values_at_one():
    bl, _, _, bn, _, _ = eval_correlations(SOL, 1.0)
    assert bl == pytest.approx(0.6065306597126334, abs=1e-15)
    assert bn == pytest.approx(0.0, abs=1e-15)
    bl, _, _, bn, _, _ = eval_correlations(POT, 1.0)
    assert bl == pytest.approx(0.0, abs=1e-15)
    assert bn == pytest.approx(E_HALF, abs=1e-15)


def test_negative_radius_rejected():
    with pytest.raises(DomainError):
        eval_correlations(SOL, -0.1)


def test_correlations_bounded_on_dense_grid():
    r = np.linspace(0, 20, 20001)
    for fam in (SOL, POT, MIX):
        vals = eval_correlations(fam, r)
        assert np.all(np.abs(vals[0]) <= 1 + 1e-15)
        assert np.all(np.abs(vals[3]) <= 1 + 1e-15)


def test_derivatives_match_finite_differences():
    r = np.linspace(0.05, 4, 80)
    h = 1e-5
    for fam in (SOL, POT, MIX):
        v = eval_correlations(fam, r)
        up = eval_correlations(fam, r + h)
        dn = eval_correlations(fam, r - h)
        for k in (0, 3):
            np.testing.assert_allclose(v[k + 1], (up[k] - dn[k]) / (2 * h), atol=1e-8)
            np.testing.assert_allclose(v[k + 2], (up[k + 1] - dn[k + 1]) / (2 * h), atol=1e-8)


def test_five_point_betas():
    h = 1e-3
    for fam in (SOL, POT, MIX):
        for k, beta in ((0, fam.beta_L), (3, fam.beta_N)):
            f = [float(eval_correlations(fam, abs(x))[k]) for x in (-2 * h, -h, 0.0, h, 2 * h)]
            d2 = (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * h * h)
            assert -d2 == pytest.approx(beta, abs=1e-6)


def test_tensor_examples():
    np.testing.assert_array_equal(eval_tensor(SOL, [0.0, 0.0]), np.eye(2))
    np.testing.assert_allclose(eval_tensor(SOL, [1.0, 0.0]), np.diag([E_HALF, 0.0]), atol=1e-15)


def test_tensor_shape_check():
    with pytest.raises(ValueError):
        eval_tensor(SOL, [1.0, 2.0, 3.0])


@given(families, point, st.floats(0, 2 * math.pi))
def test_rotation_equivariance(fam, x, a):
    O = rotation(a)
    x = np.array(x)
    np.testing.assert_allclose(eval_tensor(fam, O @ x), O @ eval_tensor(fam, x) @ O.T, atol=1e-12)


@given(families, point)
def test_tensor_symmetric_with_bounded_spectrum(fam, x):
    b = eval_tensor(fam, x)
    np.testing.assert_array_equal(b, b.T)
    lam = np.linalg.eigvalsh(b)
    assert np.all(np.abs(lam) <= 1 + 1e-12)


def test_two_point_matrix_examples():
    lam = np.sort(np.linalg.eigvalsh(two_point_matrix(SOL, [0.3, 0.1], [0.3, 0.1])))
    np.testing.assert_allclose(lam, [0, 0, 2, 2], atol=1e-12)
    lam = np.sort(np.linalg.eigvalsh(two_point_matrix(SOL, [0.0, 0.0], [0.6, 0.8])))
    np.testing.assert_allclose(lam, np.sort([1 + E_HALF, 1 - E_HALF, 1, 1]), atol=1e-12)
    lam = np.linalg.eigvalsh(two_point_matrix(SOL, [0.0, 0.0], [60.0, 0.0]))
    np.testing.assert_allclose(lam, 1.0, atol=1e-12)


@settings(max_examples=60)
@given(families, point)
def test_spectrum_matches_numeric(fam, z):
    z = np.array(z)
    if np.linalg.norm(z) < 1e-6:
        return
    rep = spectrum_report(fam, z)
    np.testing.assert_allclose(rep.expanded("b"), np.linalg.eigvalsh(eval_tensor(fam, z)), atol=1e-10)
    np.testing.assert_allclose(
        rep.expanded("bbar"), np.linalg.eigvalsh(two_point_matrix(fam, z, np.zeros(2))), atol=1e-10
    )


def test_spectrum_examples():
    rep = spectrum_report(SOL, [1.0, 0.0])
    assert rep.eigenvalues_b[0] == (pytest.approx(E_HALF, abs=1e-15), 1)
    assert rep.eigenvalues_b[1][0] == pytest.approx(0.0, abs=1e-15)
    rep = spectrum_report(POT, [1.0, 0.0])
    assert rep.eigenvalues_b[0][0] == pytest.approx(0.0, abs=1e-15)
    assert rep.eigenvalues_b[1][0] == pytest.approx(E_HALF, abs=1e-15)
    a = spectrum_report(SOL, [0.7, 0.0])
    b = spectrum_report(SOL, [0.0, 0.7])
    assert a.eigenvalues_b == b.eigenvalues_b and a.eigenvalues_bbar == b.eigenvalues_bbar


def test_spectrum_degenerate_point():
    with pytest.raises(DegeneratePointError) as info:
        spectrum_report(SOL, [0.0, 0.0])
    np.testing.assert_array_equal(info.value.fallback.expanded("b"), [1.0, 1.0])


def test_lyapunov_examples():
    sp = lyapunov_exponents(SOL)
    assert (sp.beta_L, sp.beta_N) == (1.0, 3.0)
    assert sp.mu == (1.0, -1.0) and sp.top_positive
    assert sum(sp.mu) == 0.0
    sp = lyapunov_exponents(POT)
    assert (sp.beta_L, sp.beta_N, sp.mu) == (3.0, 1.0, (-1.0, -3.0))
    sp = lyapunov_exponents(MIX)
    assert sp.beta_L == sp.beta_N == 2.0 and sp.mu[0] == 0.0


@given(st.floats(0.3, 3.0), st.integers(2, 3))
def test_solenoidal_exponents_sum_to_zero(ell, d):
    mu = lyapunov_exponents(CorrelationFamily(length_scale=ell, dimension=d)).mu
    assert abs(sum(mu)) <= 1e-12


def test_taylor_remainder_example():
    # the longitudinal remainder alone at r = 0.1
    rem = abs(1 - math.exp(-0.005) - 0.005) / 1e-3
    assert rem == pytest.approx(0.0125, abs=5e-5)
    assert rem < 0.05
    # the normal remainder binds first for the solenoidal family
    assert taylor_remainder(SOL, 0.1) == pytest.approx(0.0617, abs=1e-3)
    r = taylor_radius(SOL, 0.05)
    assert 0.07 < r < 0.09
    grid = np.linspace(5.0 / 10_000, 5.0, 10_000)
    assert np.all(taylor_remainder(SOL, grid[grid < r]) < 0.05)
    assert taylor_remainder(SOL, r) >= 0.05


def test_taylor_radius_large_eps_hits_grid_end():
    assert taylor_radius(SOL, 1e3) == TAYLOR_GRID_SPAN


@given(st.floats(1e-3, 10), st.floats(1e-3, 10))
@settings(max_examples=30)
def test_taylor_radius_monotone(e1, e2):
    lo, hi = sorted((e1, e2))
    assert taylor_radius(SOL, lo, 2000) <= taylor_radius(SOL, hi, 2000)


def test_validate_family_examples():
    rep = validate_family(SOL, [np.zeros((1, 2))])
    assert rep.passed and rep.min_eigenvalues[0] == pytest.approx(1.0)
    rng = np.random.default_rng(3)
    rep = validate_family(SOL, [rng.uniform(-5, 5, (16, 2)), np.column_stack([np.arange(8.0), np.zeros(8)])])
    assert rep.passed and min(rep.min_eigenvalues) >= -1e-10
    with pytest.raises(ValueError):
        validate_family(SOL, [np.zeros((65, 2))])


def test_validate_family_names_offender():
    close = np.array([[0.0, 0.0], [1e-9, 0.0], [0.0, 1e-9]])
    rep = validate_family(SOL, [np.zeros((1, 2)), close], tol=-0.5)
    assert not rep.passed and rep.offending == 1


@given(families, st.lists(point, min_size=2, max_size=6), st.randoms(use_true_random=False))
@settings(max_examples=40)
def test_block_covariance_permutes_consistently(fam, pts, rnd):
    pts = np.array(pts)
    perm = list(range(len(pts)))
    rnd.shuffle(perm)
    C = block_covariance(fam, pts)
    idx = np.concatenate([[2 * p, 2 * p + 1] for p in perm])
    np.testing.assert_allclose(block_covariance(fam, pts[perm]), C[np.ix_(idx, idx)], atol=1e-15)


def test_family_validation():
    with pytest.raises(ValueError):
        CorrelationFamily(kind="nope")
    with pytest.raises(ValueError):
        CorrelationFamily(length_scale=0)
    with pytest.raises(ValueError):
        CorrelationFamily(kind=MIXTURE, mix_weight=1.5)
    rec = MIX.to_record()
    assert CorrelationFamily.from_record(rec) == MIX

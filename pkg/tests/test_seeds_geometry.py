from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ibflab.geometry import diameter, polyline_distance, polyline_point_distance
from ibflab.seeds import derive_seed, derive_seeds, make_rng, replica_rng


def splitmix64_first(state: int) -> int:
    # reference SplitMix64 (Vigna), first output for a given state
    z = (state + 0x9E3779B97F4A7C15) % 2**64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % 2**64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % 2**64
    return z ^ (z >> 31)


def test_seed_matches_reference_splitmix():
    assert derive_seed(0, 0) == 0xE220A8397B1DCDAF
    assert derive_seed(0, 0) == splitmix64_first(0)
    # replica i of master s is SplitMix64 started at s + i * GOLDEN
    assert derive_seed(123, 7) == splitmix64_first(123 + 7 * 0x9E3779B97F4A7C15)


def test_seed_is_stable():
    assert derive_seed(20240601, 41) == derive_seed(20240601, 41)


def test_no_collisions_over_a_million_indices():
    s = derive_seeds(99, np.arange(1_000_000))
    assert np.unique(s).size == 1_000_000


@given(st.integers(0, 2**63), st.integers(0, 2**32 - 1))
def test_vectorised_matches_scalar(master, i):
    assert int(derive_seeds(master, [i])[0]) == derive_seed(master, i)


def test_masters_differ_on_sampled_pairs():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        s, s2 = (int(x) for x in rng.integers(0, 2**62, 2))
        i = int(rng.integers(0, 2**32))
        if s != s2:
            assert derive_seed(s, i) != derive_seed(s2, i)


def test_negative_index_rejected():
    with pytest.raises(ValueError):
        derive_seed(0, -1)


def test_rng_helpers():
    g = make_rng(5)
    assert make_rng(g) is g
    a = replica_rng(1, 2).standard_normal(4)
    b = replica_rng(1, 2).standard_normal(4)
    np.testing.assert_array_equal(a, b)


def test_diameter_examples():
    assert diameter(np.array([[1.0, 2.0]])) == 0.0
    assert diameter(np.array([[0.0, 0.0], [3.0, 4.0]])) == 5.0
    ang = 2 * math.pi * np.arange(100) / 100
    assert diameter(np.column_stack([np.cos(ang), np.sin(ang)])) == pytest.approx(2.0, abs=1e-3)


@given(st.lists(st.tuples(st.floats(-9, 9), st.floats(-9, 9)), min_size=2, max_size=120))
@settings(max_examples=50)
def test_diameter_matches_brute_force(pts):
    pts = np.array(pts)
    brute = max(np.linalg.norm(p - q) for p in pts for q in pts)
    assert diameter(pts) == pytest.approx(brute, rel=1e-12, abs=1e-12)


def test_polyline_distance_examples():
    a = np.array([[-1.0, 0.0], [1.0, 0.0]])
    assert polyline_distance(a, np.array([[0.0, -1.0], [0.0, 1.0]])) == 0.0
    assert polyline_distance(a, a + [0.0, 1.0]) == pytest.approx(1.0)
    assert polyline_point_distance(a, np.array([3.0, 0.0])) == pytest.approx(2.0)
    sq = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    # the closing edge counts only for closed curves
    p = np.array([[-0.5, 0.5]])
    assert polyline_distance(sq, p, closed_a=True) == pytest.approx(0.5)
    assert polyline_distance(sq, p, closed_a=False) == pytest.approx(math.hypot(0.5, 0.5))


seg = st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))


@given(seg, seg)
def test_polyline_distance_symmetric_and_bounded(s1, s2):
    a = np.array(s1, dtype=float).reshape(2, 2)
    b = np.array(s2, dtype=float).reshape(2, 2)
    d = polyline_distance(a, b)
    assert d == pytest.approx(polyline_distance(b, a), abs=1e-9)
    # never more than the closest vertex pair, never less than a dense sampling minus slack
    vmin = min(np.linalg.norm(p - q) for p in a for q in b)
    assert d <= vmin + 1e-12
    u = np.linspace(0, 1, 201)[:, None]
    pa = a[0] + u * (a[1] - a[0])
    pb = b[0] + u * (b[1] - b[0])
    dense = np.min(np.linalg.norm(pa[:, None] - pb[None], axis=-1))
    assert d <= dense + 1e-9

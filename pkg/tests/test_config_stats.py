from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ibflab.config import DEFAULTS, ConfigError, load_config, parse_config, serialize_config
from ibflab.stats import Moments, ks_two_sample, mean_se, merge_all, within_combined_se


def test_minimal_document_gets_defaults():
    cfg = parse_config("{}")
    assert cfg.data == DEFAULTS
    assert cfg.replicas == 64 and cfg.master_seed == 0
    assert cfg.scheme.dt == 0.01
    assert cfg.family.length_scale == 1.0


def test_replicas_zero_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config('{"replicas": 0}')
    assert "replicas must be ≥ 1" in info.value.violations


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as info:
        parse_config('{"scheme": {"dtt": 0.1}}')
    assert any("dtt" in v for v in info.value.violations)


def test_all_violations_reported_together():
    with pytest.raises(ConfigError) as info:
        parse_config('{"replicas": 0, "scheme": {"dt": -1}, "bogus": 1}')
    assert len(info.value.violations) >= 1
    with pytest.raises(ConfigError) as info:
        parse_config('{"replicas": 0, "scheme": {"dt": -1}}')
    assert len(info.value.violations) == 2


def test_syntax_error_has_line_and_column():
    with pytest.raises(ConfigError) as info:
        parse_config('{\n  "replicas": 4,\n  oops\n}')
    msg = info.value.violations[0]
    assert "line 3" in msg and "column 3" in msg


def test_round_trip_and_digest(tmp_path):
    cfg = parse_config('{"replicas": 5, "master_seed": 9, "horizon": 2.5}')
    p = tmp_path / "c.json"
    p.write_text(serialize_config(cfg))
    back = load_config(p)
    assert back.data == cfg.data
    assert back.digest() == cfg.digest()
    assert len(cfg.digest()) == 64
    # key order in the source document does not matter
    a = parse_config('{"replicas": 5, "master_seed": 9}')
    b = parse_config('{"master_seed": 9, "replicas": 5}')
    assert a.digest() == b.digest()
    assert a.digest() != parse_config('{"master_seed": 10, "replicas": 5}').digest()


def test_overrides_are_validated():
    cfg = parse_config("{}")
    o = cfg.with_overrides(seed=3, replicas=2, out="x")
    assert (o.master_seed, o.replicas, o["outputs"]["dir"]) == (3, 2, "x")
    assert cfg.replicas == 64
    with pytest.raises(ConfigError):
        cfg.with_overrides(replicas=0)


def test_shipped_configs_parse():
    import pathlib

    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.json"))
    assert files
    for f in files:
        load_config(f)
        json.loads(f.read_text())


def test_ks_identical_samples():
    a = np.linspace(0, 1, 50)
    assert ks_two_sample(a, a) == (0.0, 1.0)
    with pytest.raises(ValueError):
        ks_two_sample([], a)


def test_ks_detects_shift():
    rng = np.random.default_rng(0)
    d, p = ks_two_sample(rng.uniform(0, 1, 1000), rng.uniform(0.3, 1.3, 1000))
    assert d > 0.2 and p < 1e-6


def test_ks_null_calibration():
    rng = np.random.default_rng(1)
    ok = sum(ks_two_sample(rng.normal(size=200), rng.normal(size=300))[1] > 0.01 for _ in range(100))
    assert ok >= 95


def test_ks_matches_scipy_asymptotics():
    from scipy.stats import ks_2samp

    rng = np.random.default_rng(2)
    a, b = rng.normal(size=400), rng.normal(0.2, 1, size=500)
    d, p = ks_two_sample(a, b)
    ref = ks_2samp(a, b, method="asymp")
    assert d == pytest.approx(ref.statistic, abs=1e-12)
    assert p == pytest.approx(ref.pvalue, rel=0.2)


finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(st.lists(finite, max_size=20), st.lists(finite, max_size=20), st.lists(finite, max_size=20))
@settings(max_examples=80)
def test_moments_merge_associative(x, y, z):
    a, b, c = Moments.of(x), Moments.of(y), Moments.of(z)
    left = a.merge(b).merge(c)
    right = a.merge(b.merge(c))
    whole = Moments.of(x + y + z)
    for m in (left, right):
        assert m.n == whole.n
        if whole.n:
            assert m.mean == pytest.approx(whole.mean, abs=1e-9)
            assert m.m2 == pytest.approx(whole.m2, rel=1e-7, abs=1e-6)
            assert (m.lo, m.hi) == (whole.lo, whole.hi)
    assert merge_all([a, b, c]).n == whole.n


def test_moments_small_counts():
    assert math.isnan(Moments.of([1.0]).variance)
    m = Moments.of([1.0, 3.0])
    assert m.variance == 2.0 and m.std_error == 1.0
    assert mean_se([1.0, 3.0]) == (2.0, 1.0)
    assert math.isnan(mean_se([2.0])[1])


def test_within_combined_se():
    ok, worst = within_combined_se([1.0, 1.2], [0.1, 0.1], 2.0)
    assert ok and worst == pytest.approx(0.2 / math.hypot(0.1, 0.1))
    ok, worst = within_combined_se([1.0, 2.0, 1.1], [0.1, 0.1, 0.1], 3.0)
    assert not ok and worst == pytest.approx(1.0 / math.hypot(0.1, 0.1))
    assert within_combined_se([1.0, 1.0], [0.0, 0.0], 1.0) == (True, 0.0)
    assert within_combined_se([1.0, 2.0], [0.0, 0.0], 1.0) == (False, math.inf)

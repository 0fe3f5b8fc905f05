import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cad25d.evaluation import (EvalStats, PoseCurve, angular_error, depth_coverage_filter, object_masked_stats,
                               pose_angular_error, pose_auc, pose_fraction_curve, six_stats, stats_table_csv)
from cad25d.render import DepthMap, NormalMap
from cad25d.retrieval import BoundingBox
from oracles import brute_auc, brute_fraction, brute_stats


def test_angular_error_examples():
    z = np.array([[[0, 0, 1.0]]])
    assert angular_error(z, z)[0] == 0.0
    assert angular_error(z, np.array([[[0, 1.0, 0]]]))[0] == pytest.approx(90.0)
    b = np.array([[[np.sqrt(0.75), 0, 0.5]]])
    assert angular_error(z, b)[0] == pytest.approx(60.0)


def test_angular_error_masks():
    p = NormalMap(np.tile([0, 0, 1.0], (2, 2, 1)), np.array([[True, False], [True, True]]))
    g = NormalMap(np.tile([0, 1.0, 0], (2, 2, 1)), np.array([[True, True], [False, True]]))
    assert len(angular_error(p, g)) == 2
    assert len(angular_error(p, g, np.array([[True, True], [True, False]]))) == 1


def test_six_stats_examples():
    s = six_stats([0, 0, 0])
    assert s.as_row() == (0.0, 0.0, 0.0, 100.0, 100.0, 100.0)
    s = six_stats([10, 30])
    assert (s.mean_deg, s.median_deg) == (20.0, 20.0)
    assert s.rmse_deg == pytest.approx(22.3607, abs=1e-4)
    assert (s.pct_within_11_25, s.pct_within_22_5, s.pct_within_30) == (50.0, 50.0, 100.0)
    assert six_stats([22.5]).pct_within_22_5 == 100.0
    with pytest.raises(ValueError):
        six_stats([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 180), min_size=1, max_size=60))
def test_six_stats_matches_brute_force(errs):
    got = six_stats(errs).as_row()
    np.testing.assert_allclose(got, brute_stats(errs), atol=1e-9, rtol=0)
    s = six_stats(errs)
    assert s.pct_within_11_25 <= s.pct_within_22_5 <= s.pct_within_30
    assert s.mean_deg >= 0 and s.rmse_deg >= 0


def test_object_masked_stats():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(6, 6, 3))
    p /= np.linalg.norm(p, axis=-1, keepdims=True)
    g = rng.normal(size=(6, 6, 3))
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    P, G = NormalMap.from_array(p), NormalMap.from_array(g)
    full = object_masked_stats(P, G, {"all": np.ones((6, 6), bool)})["all"]
    assert full == six_stats(angular_error(P, G))
    chair = np.zeros((6, 6), bool)
    chair[:3] = True
    out = object_masked_stats(P, G, {"chair": chair, "sofa": ~chair, "bed": np.zeros((6, 6), bool)})
    assert "bed" not in out
    assert out["chair"].count + out["sofa"].count == 36
    brute = [np.degrees(np.arccos(np.clip(p[y, x] @ g[y, x], -1, 1))) for y in range(3) for x in range(6)]
    np.testing.assert_allclose(out["chair"].as_row(), brute_stats(brute), atol=1e-9)


def test_pose_angular_error():
    assert pose_angular_error(0, 18) == 180.0
    assert pose_angular_error(35, 0) == 10.0
    assert pose_angular_error(7, 7) == 0.0
    with pytest.raises(ValueError):
        pose_angular_error(36, 0)


def test_pose_curve_examples():
    c = pose_fraction_curve([0, 10, 180])
    assert c.fraction[15] == pytest.approx(2 / 3)
    assert c.fraction[180] == 1.0
    assert np.all(pose_fraction_curve([0, 0]).fraction == 1.0)
    with pytest.raises(ValueError):
        pose_fraction_curve([])


def test_pose_auc_examples():
    grid = np.arange(0.0, 181.0)
    assert pose_auc(PoseCurve(np.zeros(1), grid, np.ones_like(grid))) == 1.0
    assert pose_auc(PoseCurve(np.zeros(1), grid, np.zeros_like(grid))) == 0.0
    assert pose_auc(PoseCurve(np.zeros(1), grid, np.full_like(grid, 0.5))) == 0.5
    assert pose_auc(pose_fraction_curve([0.0, 0.0])) == 1.0
    with pytest.raises(ValueError):
        pose_auc(PoseCurve(np.zeros(1), np.arange(0.0, 30.0), np.ones(30)))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 18).map(lambda k: 10.0 * k), min_size=1, max_size=50))
def test_curve_and_auc_match_brute_force(errs):
    c = pose_fraction_curve(errs)
    np.testing.assert_allclose(c.fraction, brute_fraction(errs, list(c.grid)), atol=1e-12)
    assert np.all(np.diff(c.fraction) >= 0) and c.fraction[-1] == 1.0
    assert pose_auc(c) == pytest.approx(brute_auc(list(c.grid), list(c.fraction), 45.0), abs=1e-9)


def test_random_predictor_expectation():
    rng = np.random.default_rng(0)
    err = pose_angular_error(rng.integers(0, 36, 20000), rng.integers(0, 36, 20000))
    assert abs(pose_auc(pose_fraction_curve(err)) - 0.125) < 0.01


def test_depth_coverage_filter():
    full = DepthMap.from_array(np.ones((4, 4)))
    empty = DepthMap.from_array(np.full((4, 4), np.nan))
    half = np.ones((4, 4))
    half[:2] = np.nan
    half = DepthMap.from_array(half)
    box = BoundingBox(0, 0, 4, 4)
    kept = depth_coverage_filter([(full, box, "a"), (empty, box, "b"), (half, box, "c")])
    assert [k[2] for k in kept] == ["a"]
    assert len(depth_coverage_filter([(empty, box)], enabled=False)) == 1


def test_stats_csv_layout():
    text = stats_table_csv({"global": six_stats([10, 30])})
    lines = text.split("\n")
    assert lines[0] == "scope,mean,median,rmse,11.25,22.5,30,pixels"
    assert lines[1].startswith("global,20.0000,20.0000,22.3607,50.0000,50.0000,100.0000,2")
    assert "\r" not in text


def test_eval_stats_row_order():
    s = EvalStats(1, 2, 3, 4, 5, 6)
    assert s.as_row() == (1, 2, 3, 4, 5, 6)

import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cad25d.render import Camera, NormalMap, ViewPose, load_obj, render_view
from cad25d.retrieval import (BoundingBox, LibraryView, RetrievalCandidate, appearance_score, combine_scores,
                              dot_score, geom_score, iou, knn_retrieve, make_template, prune_by_azimuth,
                              rank_candidates, resize_nearest, results_csv, sliding_window_match)
from oracles import CUBE_OBJ


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_iou_examples():
    a = BoundingBox(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(5, 5, 1, 1)) == 0.0
    assert iou(a, BoundingBox(1, 0, 2, 2)) == pytest.approx(2 / 6)


def test_box_invariants():
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 0, 3)
    assert BoundingBox(1, 1, 2, 2).inside(3, 3) and not BoundingBox(2, 2, 2, 2).inside(3, 3)
    m = np.zeros((5, 5), bool)
    m[1:3, 2:5] = True
    assert tuple(BoundingBox.from_mask(m)) == (2, 1, 3, 2)


@settings(max_examples=100, deadline=None)
@given(*[st.integers(0, 10)] * 4, *[st.integers(1, 6)] * 4)
def test_iou_bounds_and_symmetry(x1, y1, x2, y2, w1, h1, w2, h2):
    a, b = BoundingBox(x1, y1, w1, h1), BoundingBox(x2, y2, w2, h2)
    assert 0.0 <= iou(a, b) <= 1.0
    assert iou(a, b) == iou(b, a)


def test_geom_and_dot_examples():
    z = np.tile([0, 0, 1.0], (2, 1, 1))
    assert geom_score(z, z) == 1.0 and dot_score(z, z) == 1.0
    x = np.tile([1.0, 0, 0], (2, 1, 1))
    assert geom_score(z, x) == 0.0 and dot_score(z, x) == 0.0
    t10, t40 = np.deg2rad(10), np.deg2rad(40)
    two = np.array([[[np.sin(t10), 0, np.cos(t10)]], [[np.sin(t40), 0, np.cos(t40)]]])
    assert geom_score(z, two) == 0.5
    t60 = np.deg2rad(60)
    assert dot_score(z, np.tile([np.sin(t60), 0, np.cos(t60)], (2, 1, 1))) == pytest.approx(0.5)
    nan = np.full((2, 1, 3), np.nan)
    assert geom_score(z, nan) == 0.0 and dot_score(z, nan) == 0.0


def test_geom_threshold_inclusive():
    t = np.deg2rad(30)
    assert geom_score(np.array([[[0, 0, 1.0]]]), np.array([[[np.sin(t), 0, np.cos(t)]]])) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_scores_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = unit(rng.normal(size=(4, 4, 3))), unit(rng.normal(size=(4, 4, 3)))
    for f in (geom_score, dot_score):
        assert f(a, b) == f(b, a)
        assert 0.0 <= f(a, b) <= 1.0


def test_appearance_and_combine():
    rng = np.random.default_rng(0)
    f = rng.normal(size=8)
    assert appearance_score(f, f) == pytest.approx(1.0)
    assert appearance_score(f, -f) == pytest.approx(0.0)
    assert appearance_score(np.zeros(8), f) == 0.5
    g = rng.normal(size=8)
    assert appearance_score(f, g) == pytest.approx((1 + f @ g / np.linalg.norm(f) / np.linalg.norm(g)) / 2)
    assert combine_scores(0.3, 0.9, 1.0) == 0.3 and combine_scores(0.3, 0.9, 0.0) == 0.9
    assert combine_scores(0.4, 0.8, 0.5) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        combine_scores(0.1, 0.1, 1.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5))
def test_combine_monotone(n, a, w, d):
    base = combine_scores(n, a, w)
    assert combine_scores(min(1, n + d), a, w) >= base - 1e-12
    assert combine_scores(n, min(1, a + d), w) >= base - 1e-12


def _cand(mid, az, score):
    return RetrievalCandidate(mid, ViewPose(az), score)


def test_prune_examples():
    out = prune_by_azimuth([_cand("a", 0, 0.9), _cand("a", 10, 0.8)])
    assert [(c.model_id, c.pose.azimuth_deg) for c in out] == [("a", 0)]
    assert len(prune_by_azimuth([_cand("a", 0, 0.9), _cand("a", 180, 0.8)])) == 2
    assert len(prune_by_azimuth([_cand("a", 0, 0.9), _cand("b", 0, 0.8)])) == 2
    assert len(prune_by_azimuth([_cand("a", 350, 0.9), _cand("a", 10, 0.8)])) == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.integers(0, 35), st.floats(0, 1)), min_size=1, max_size=20))
def test_prune_keeps_order_and_top(items):
    cands = rank_candidates([_cand(m, 10 * a, s) for m, a, s in items])
    out = prune_by_azimuth(cands)
    assert out[0] is cands[0]
    assert all(out[i].score >= out[i + 1].score for i in range(len(out) - 1))


def _toy_query(rng, H=16, W=16):
    return unit(rng.normal(size=(H, W, 3)))


def _brute_match(query, box, template, scoring, stride, scales, pad):
    """Exhaustive window oracle for boxes whose longer side already equals max_dim."""
    score_fn = geom_score if scoring == "geom" else dot_score
    H, W = query.shape[:2]
    best = -1.0
    for sc in scales:
        th, tw = max(1, round(template.shape[0] * sc)), max(1, round(template.shape[1] * sc))
        tmpl = template if sc == 1.0 else unit(resize_nearest(template, th, tw))
        for y in range(box.y - pad, box.y + box.h + pad - th + 1, stride):
            for x in range(box.x - pad, box.x + box.w + pad - tw + 1, stride):
                win = np.full((th, tw, 3), np.nan)
                for i in range(th):
                    for j in range(tw):
                        if 0 <= y + i < H and 0 <= x + j < W:
                            win[i, j] = query[y + i, x + j]
                best = max(best, score_fn(win, tmpl) * iou(BoundingBox(x, y, tw, th), box))
    return best


@pytest.mark.parametrize("scoring", ["geom", "dot"])
def test_sliding_window_matches_exhaustive_oracle(scoring):
    rng = np.random.default_rng(3)
    query = _toy_query(rng)
    box = BoundingBox(4, 4, 8, 8)
    template = query[5:11, 6:12] + 0.3 * rng.normal(size=(6, 6, 3))
    template = unit(template)
    got, _, _ = sliding_window_match(query, box, template, scoring, stride=1, scales=(0.75, 1.0, 1.25),
                                     pad_frac=0.25, max_dim=8)
    assert got == pytest.approx(_brute_match(query, box, template, scoring, 1, (0.75, 1.0, 1.25), 2), abs=1e-12)
    got4, _, _ = sliding_window_match(query, box, template, scoring, stride=4, scales=(1.0,), pad_frac=0.5,
                                      max_dim=8)
    assert got4 == pytest.approx(_brute_match(query, box, template, scoring, 4, (1.0,), 4), abs=1e-12)


def test_sliding_window_self_match_and_invalid_query():
    cube = load_obj(CUBE_OBJ)
    _, nm = render_view(cube, ViewPose(30, 20), Camera())
    box = BoundingBox.from_mask(nm.mask)
    tmpl = make_template(nm)
    assert max(tmpl.shape[:2]) == 40
    score, win, tie = sliding_window_match(nm, box, tmpl)
    assert score == 1.0 and win == box and tie == 1.0
    empty = NormalMap(np.full(nm.normals.shape, np.nan), np.zeros(nm.mask.shape, bool))
    assert sliding_window_match(empty, box, tmpl)[0] == 0.0


def test_sliding_window_tiny_box_uses_centred_window():
    rng = np.random.default_rng(5)
    q = _toy_query(rng)
    score, win, _ = sliding_window_match(q, BoundingBox(6, 6, 2, 2), unit(rng.normal(size=(40, 40, 3))),
                                         scales=(1.0,), pad_frac=0.0, max_dim=2)
    assert 0.0 <= score <= 1.0 and win.w >= 1


def test_knn_retrieve_examples():
    cube = load_obj(CUBE_OBJ, "cube")
    cam = Camera(48, 48)
    lib = []
    for az in (0, 40, 80):
        _, nm = render_view(cube, ViewPose(az, 20), cam)
        lib.append(LibraryView("cube", ViewPose(az, 20), make_template(nm)))
    _, q = render_view(cube, ViewPose(40, 20), cam)
    top = knn_retrieve(q, BoundingBox.from_mask(q.mask), lib, k=1)
    assert len(top) == 1 and top[0].pose.azimuth_deg == 40 and top[0].score == 1.0
    assert len(knn_retrieve(q, BoundingBox.from_mask(q.mask), lib, k=99, prune_deg=0)) == 3
    with pytest.raises(ValueError):
        knn_retrieve(q, BoundingBox.from_mask(q.mask), [], k=1)


def test_knn_ranking_matches_brute_force():
    rng = np.random.default_rng(7)
    q = _toy_query(rng, 20, 20)
    box = BoundingBox(3, 3, 12, 10)
    lib = [LibraryView(m, ViewPose(a), unit(rng.normal(size=(8, 10, 3)) + [0, 0, 2]))
           for m in ("a", "b", "c") for a in (0, 90, 180)]
    kw = dict(stride=2, scales=(1.0,), pad_frac=0.2, max_dim=12)
    got = knn_retrieve(q, box, lib, k=100, prune_deg=0, **kw)
    scores = [(sliding_window_match(q, box, v.template, "geom", **kw), v) for v in lib]
    expect = sorted(scores, key=lambda t: (-t[0][0], -t[0][2]))
    assert [(c.model_id, c.pose.azimuth_deg) for c in got] == [(v.model_id, v.pose.azimuth_deg) for _, v in expect]


def test_results_csv_header():
    text = results_csv([("q1", [RetrievalCandidate("m", ViewPose(10, 20), 0.5, BoundingBox(1, 2, 3, 4))])])
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["query_id", "rank", "model_id", "azimuth_deg", "elevation_deg", "score",
                       "wx", "wy", "ww", "wh"]
    assert rows[1] == ["q1", "1", "m", "10", "20", "0.500000", "1", "2", "3", "4"]

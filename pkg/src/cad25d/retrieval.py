"""Nearest-neighbour CAD retrieval by sliding rendered normal templates over a query box."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .render import NormalMap, ViewPose

GEOM_THRESHOLD_DEG = 30.0
TEMPLATE_SIZE = 40


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("box width and height must be positive")

    def __iter__(self):
        return iter((self.x, self.y, self.w, self.h))

    def inside(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "BoundingBox":
        ys, xs = np.nonzero(mask)
        if len(ys) == 0:
            raise ValueError("empty mask has no bounding box")
        return cls(int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


@dataclass
class RetrievalCandidate:
    model_id: str
    pose: ViewPose
    score: float
    window: BoundingBox | None = None
    tiebreak: float = 0.0
    embedding: np.ndarray | None = field(default=None, repr=False)
    style_family: str = ""


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def _as_arrays(normals) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(normals, NormalMap):
        return normals.normals, normals.mask
    arr = np.asarray(normals, dtype=np.float64)
    return arr, np.all(np.isfinite(arr), axis=-1)


def geom_score(query, template, mask: np.ndarray | None = None,
               threshold_deg: float = GEOM_THRESHOLD_DEG) -> float:
    """Fraction of jointly valid pixels whose angular error is within ``threshold_deg``."""
    q, qm = _as_arrays(query)
    t, tm = _as_arrays(template)
    m = qm & tm if mask is None else qm & tm & np.asarray(mask, dtype=bool)
    if not m.any():
        return 0.0
    dots = np.clip((q[m] * t[m]).sum(axis=-1), -1.0, 1.0)
    return float(np.mean(dots >= np.cos(np.deg2rad(threshold_deg)) - 1e-12))


def dot_score(query, template, mask: np.ndarray | None = None) -> float:
    """Mean of ``clamp(n_q . n_t, 0, 1)`` over jointly valid pixels."""
    q, qm = _as_arrays(query)
    t, tm = _as_arrays(template)
    m = qm & tm if mask is None else qm & tm & np.asarray(mask, dtype=bool)
    if not m.any():
        return 0.0
    return float(np.mean(np.clip((q[m] * t[m]).sum(axis=-1), 0.0, 1.0)))


SCORERS = {"geom": geom_score, "dot": dot_score}


def resize_nearest(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resampling of the first two axes (pixel-centre aligned)."""
    H, W = arr.shape[:2]
    ys = np.minimum(((np.arange(height) + 0.5) * H / height).astype(np.int64), H - 1)
    xs = np.minimum(((np.arange(width) + 0.5) * W / width).astype(np.int64), W - 1)
    return arr[ys][:, xs]


def fit_size(h: int, w: int, max_dim: int) -> tuple[int, int]:
    s = max_dim / max(h, w)
    return max(1, int(round(h * s))), max(1, int(round(w * s)))


def make_template(normals: NormalMap, max_dim: int = TEMPLATE_SIZE) -> np.ndarray:
    """Crop a rendered normal view to its silhouette and resize so its longer side is ``max_dim``.

    Invalid pixels are NaN; valid ones are renormalised after resampling.
    """
    box = BoundingBox.from_mask(normals.mask)
    crop = np.where(normals.mask[..., None], normals.normals, np.nan)[box.y:box.y + box.h, box.x:box.x + box.w]
    h, w = fit_size(box.h, box.w, max_dim)
    return _renormalize(resize_nearest(crop, h, w))


def _renormalize(n: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _window_scores(region: np.ndarray, region_ok: np.ndarray, tmpl: np.ndarray,
                   scoring: str, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Score placements of ``tmpl`` inside ``region`` on a ``stride`` grid from the origin.

    Returns (score, tiebreak) grids indexed by placement.
    """
    th, tw = tmpl.shape[:2]
    t_ok = np.all(np.isfinite(tmpl), axis=-1)
    t0 = np.where(t_ok[..., None], tmpl, 0.0)
    q0 = np.where(region_ok[..., None], region, 0.0)
    qw = sliding_window_view(q0, (th, tw), axis=(0, 1))[::stride, ::stride]         # [Y, X, 3, th, tw]
    mw = sliding_window_view(region_ok, (th, tw), axis=(0, 1))[::stride, ::stride]  # [Y, X, th, tw]
    joint = mw & t_ok
    dots = np.einsum("yxkij,ijk->yxij", qw, t0)
    n = joint.sum(axis=(2, 3))
    safe = np.maximum(n, 1)
    dot = np.where(joint, np.clip(dots, 0.0, 1.0), 0.0).sum(axis=(2, 3)) / safe
    cos_t = np.cos(np.deg2rad(GEOM_THRESHOLD_DEG)) - 1e-12
    geom = (joint & (np.clip(dots, -1, 1) >= cos_t)).sum(axis=(2, 3)) / safe
    dot = np.where(n > 0, dot, 0.0)
    geom = np.where(n > 0, geom, 0.0)
    return (geom, dot) if scoring == "geom" else (dot, geom)


def sliding_window_match(query, box: BoundingBox, template: np.ndarray, scoring: str = "geom",
                         stride: int = 4, scales=(0.75, 1.0, 1.25), pad_frac: float = 0.2,
                         max_dim: int = TEMPLATE_SIZE) -> tuple[float, BoundingBox, float]:
    """Best IoU-penalised window score of ``template`` around ``box``.

    The query is rescaled so the box's longer side is ``max_dim`` pixels, which
    puts it in the same frame as templates from :func:`make_template`.  Window
    positions are laid out on a ``stride`` grid anchored at the box corner, so
    the box itself is always one of the candidates.  Returns
    ``(score, window, tiebreak)`` where the window is in query-image pixels and
    ``tiebreak`` is the other criterion's value at the best window.
    """
    if scoring not in SCORERS:
        raise ValueError(f"unknown scoring {scoring!r}")
    q, qm = _as_arrays(query)
    H, W = qm.shape
    bh, bw = fit_size(box.h, box.w, max_dim)
    pad = int(round(pad_frac * max_dim))
    pad = stride * int(np.ceil(pad / stride))
    # query crop covering the padded box, resampled into template units with
    # the same nearest-neighbour rule as make_template
    ph, pw = bh + 2 * pad, bw + 2 * pad
    yi = box.y + np.floor((np.arange(ph) - pad + 0.5) * box.h / bh).astype(np.int64)
    xi = box.x + np.floor((np.arange(pw) - pad + 0.5) * box.w / bw).astype(np.int64)
    inside = ((yi >= 0) & (yi < H))[:, None] & ((xi >= 0) & (xi < W))[None, :]
    yc, xc = np.clip(yi, 0, H - 1), np.clip(xi, 0, W - 1)
    region = q[yc][:, xc]
    region_ok = qm[yc][:, xc] & inside
    region = np.where(region_ok[..., None], region, 0.0)
    box_local = BoundingBox(pad, pad, bw, bh)

    best = (-1.0, -1.0, box_local)
    th0, tw0 = template.shape[:2]
    for sc in scales:
        th, tw = max(1, int(round(th0 * sc))), max(1, int(round(tw0 * sc)))
        tmpl = template if (th, tw) == (th0, tw0) else _renormalize(resize_nearest(template, th, tw))
        if th > ph or tw > pw:
            continue
        # pad is a multiple of stride, so this grid contains the box corner
        score, tie = _window_scores(region, region_ok, tmpl, scoring, stride)
        for iy in range(score.shape[0]):
            for ix in range(score.shape[1]):
                win = BoundingBox(ix * stride, iy * stride, tw, th)
                ov = iou(win, box_local)
                val, tb = score[iy, ix] * ov, tie[iy, ix] * ov
                if (val, tb) > best[:2]:
                    best = (val, tb, win)
    if best[0] < 0:
        # box smaller than every template scale: one centred window at scale 1
        th, tw = min(th0, ph), min(tw0, pw)
        y, x = (ph - th) // 2, (pw - tw) // 2
        tmpl = template[:th, :tw]
        score, tie = _window_scores(region, region_ok, tmpl, scoring)
        win = BoundingBox(x, y, tw, th)
        ov = iou(win, box_local)
        best = (score[y, x] * ov, tie[y, x] * ov, win)
    val, tb, win = best
    # back to query-image pixels
    sy, sx = bh / box.h, bw / box.w
    out = BoundingBox(int(round(box.x + (win.x - pad) / sx)), int(round(box.y + (win.y - pad) / sy)),
                      max(1, int(round(win.w / sx))), max(1, int(round(win.h / sy))))
    return float(val), out, float(tb)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float | None:
    a, b = np.asarray(a, dtype=np.float64).ravel(), np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return None
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def appearance_score(query_feature: np.ndarray, template_feature: np.ndarray) -> float:
    """Cosine similarity of pooled trunk features mapped to [0, 1]."""
    c = cosine_similarity(query_feature, template_feature)
    return 0.5 if c is None else (1.0 + c) / 2.0


def combine_scores(normal_score: float, appearance: float, w: float = 0.5) -> float:
    if not 0.0 <= w <= 1.0:
        raise ValueError("fusion weight must be in [0, 1]")
    return w * normal_score + (1.0 - w) * appearance


def circular_diff(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def prune_by_azimuth(candidates: list[RetrievalCandidate], window_deg: float = 20.0) -> list[RetrievalCandidate]:
    """Greedily drop candidates near a better-scored view of the same model."""
    kept: list[RetrievalCandidate] = []
    for c in candidates:
        if any(k.model_id == c.model_id and
               circular_diff(k.pose.azimuth_deg, c.pose.azimuth_deg) <= window_deg for k in kept):
            continue
        kept.append(c)
    return kept


@dataclass
class LibraryView:
    model_id: str
    pose: ViewPose
    template: np.ndarray
    feature: np.ndarray | None = None
    style_family: str = ""


def knn_retrieve(query, box: BoundingBox, library: list[LibraryView], k: int = 35,
                 scoring: str = "geom", query_feature: np.ndarray | None = None,
                 appearance_weight: float = 0.5, prune_deg: float = 20.0,
                 **match_kw) -> list[RetrievalCandidate]:
    """Score every library view against the query box and return the pruned top ``k``.

    With ``query_feature`` and library features present, normal and appearance
    scores are fused by :func:`combine_scores`.
    """
    if not library:
        raise ValueError("empty retrieval library")
    cands = []
    for view in library:
        score, win, tie = sliding_window_match(query, box, view.template, scoring, **match_kw)
        if query_feature is not None and view.feature is not None:
            score = combine_scores(score, appearance_score(query_feature, view.feature), appearance_weight)
        cands.append(RetrievalCandidate(view.model_id, view.pose, score, win, tie,
                                        style_family=view.style_family))
    ranked = rank_candidates(cands)
    return prune_by_azimuth(ranked, prune_deg)[:k]


def rank_candidates(cands: list[RetrievalCandidate]) -> list[RetrievalCandidate]:
    """Descending score, then descending tiebreak; stable for full ties."""
    return sorted(cands, key=lambda c: (-c.score, -c.tiebreak))


def results_csv(rows: list[tuple[str, list[RetrievalCandidate]]]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["query_id", "rank", "model_id", "azimuth_deg", "elevation_deg", "score", "wx", "wy", "ww", "wh"])
    for qid, cands in rows:
        for r, c in enumerate(cands, start=1):
            win = c.window or BoundingBox(0, 0, 1, 1)
            w.writerow([qid, r, c.model_id, f"{c.pose.azimuth_deg:g}", f"{c.pose.elevation_deg:g}",
                        f"{c.score:.6f}", win.x, win.y, win.w, win.h])
    return out.getvalue()

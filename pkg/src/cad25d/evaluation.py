"""Angular-error statistics for normal maps and pose-accuracy curves."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass

import numpy as np

from .render import DepthMap, NormalMap

THRESHOLDS = (11.25, 22.5, 30.0)
STAT_COLUMNS = ("mean", "median", "rmse", "11.25", "22.5", "30")


@dataclass(frozen=True)
class EvalStats:
    mean_deg: float
    median_deg: float
    rmse_deg: float
    pct_within_11_25: float
    pct_within_22_5: float
    pct_within_30: float
    count: int = 0

    def as_row(self) -> tuple[float, ...]:
        return astuple(self)[:6]


@dataclass(frozen=True)
class PoseCurve:
    errors: np.ndarray      # sorted per-instance errors, degrees
    grid: np.ndarray        # threshold values, degrees
    fraction: np.ndarray    # fraction of instances with error <= threshold

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["delta_deg", "fraction"])
        for g, f in zip(self.grid, self.fraction):
            w.writerow([f"{g:g}", f"{f:.6f}"])
        return out.getvalue()


def angular_error(pred: NormalMap | np.ndarray, gt: NormalMap | np.ndarray,
                  mask: np.ndarray | None = None) -> np.ndarray:
    """Angular errors (degrees) at pixels valid in both maps and in ``mask``."""
    p = pred.normals if isinstance(pred, NormalMap) else np.asarray(pred, dtype=np.float64)
    g = gt.normals if isinstance(gt, NormalMap) else np.asarray(gt, dtype=np.float64)
    valid = np.all(np.isfinite(p), axis=-1) & np.all(np.isfinite(g), axis=-1)
    if isinstance(pred, NormalMap):
        valid &= pred.mask
    if isinstance(gt, NormalMap):
        valid &= gt.mask
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    a, b = p[valid].astype(np.float64), g[valid].astype(np.float64)
    # atan2 stays accurate near 0 and 180 degrees, where arccos of a rounded dot does not
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    return np.degrees(np.arctan2(cross, (a * b).sum(axis=-1)))


def six_stats(errors) -> EvalStats:
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise ValueError("six_stats of an empty error list")
    pct = [100.0 * np.count_nonzero(e <= t) / e.size for t in THRESHOLDS]
    return EvalStats(float(e.mean()), float(np.median(e)), float(np.sqrt((e * e).mean())),
                     *pct, count=int(e.size))


def object_masked_stats(pred: NormalMap, gt: NormalMap,
                        masks: dict[str, np.ndarray]) -> dict[str, EvalStats]:
    """Per-class statistics; classes with no valid pixel are omitted."""
    out = {}
    for cls, m in masks.items():
        e = angular_error(pred, gt, m)
        if e.size:
            out[cls] = six_stats(e)
    return out


def pose_angular_error(pred_bin, true_bin, n_bins: int = 36):
    p, t = np.asarray(pred_bin), np.asarray(true_bin)
    if np.any((p < 0) | (p >= n_bins) | (t < 0) | (t >= n_bins)):
        raise ValueError(f"pose bins must lie in [0, {n_bins})")
    d = np.abs(p.astype(np.int64) - t.astype(np.int64)) % n_bins
    out = np.minimum(d, n_bins - d) * (360.0 / n_bins)
    return float(out) if out.ndim == 0 else out


def pose_fraction_curve(errors, grid=None, delta_max: float = 180.0) -> PoseCurve:
    e = np.sort(np.asarray(errors, dtype=np.float64).reshape(-1))
    if e.size == 0:
        raise ValueError("pose curve of an empty error list")
    g = np.arange(0.0, delta_max + 1.0, 1.0) if grid is None else np.asarray(grid, dtype=np.float64)
    frac = np.searchsorted(e, g, side="right") / e.size
    return PoseCurve(e, g, frac)


def pose_auc(curve: PoseCurve, delta_max: float = 45.0) -> float:
    """Trapezoidal area under the fraction curve on [0, delta_max], normalised to [0, 1]."""
    g, f = curve.grid, curve.fraction
    if g.size == 0 or g[0] > 0 or g[-1] < delta_max:
        raise ValueError(f"curve must cover [0, {delta_max}] degrees")
    keep = g <= delta_max
    gg, ff = g[keep], f[keep]
    if gg[-1] < delta_max:
        gg = np.append(gg, delta_max)
        ff = np.append(ff, np.interp(delta_max, g, f))
    area = np.sum((ff[1:] + ff[:-1]) * np.diff(gg)) / 2.0
    return float(area / delta_max)


def depth_coverage(depth: DepthMap, box) -> float:
    x, y, w, h = (int(v) for v in box)
    region = depth.mask[y:y + h, x:x + w]
    return float(region.mean()) if region.size else 0.0


def depth_coverage_filter(instances, threshold: float = 0.5, enabled: bool = True):
    """Keep instances whose box has valid-depth fraction strictly above ``threshold``.

    Each instance is a ``(depth_map, box, payload...)`` tuple or an object with
    ``depth`` and ``box`` attributes.  ``enabled=False`` keeps everything.
    """
    if not enabled:
        return list(instances)
    kept = []
    for inst in instances:
        depth, box = (inst[0], inst[1]) if isinstance(inst, tuple) else (inst.depth, inst.box)
        if depth_coverage(depth, box) > threshold:
            kept.append(inst)
    return kept


def stats_table_csv(rows: dict[str, EvalStats]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["scope", *STAT_COLUMNS, "pixels"])
    for name, s in rows.items():
        w.writerow([name, *(f"{v:.4f}" for v in s.as_row()), s.count])
    return out.getvalue()

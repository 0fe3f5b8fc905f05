"""Normals from depth by local plane fitting, plus Manhattan-frame rectification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .render import DepthMap, NormalMap


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")


@dataclass
class ManhattanFrame:
    """Rotation whose columns are the three dominant scene axes."""

    rotation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        if R.shape != (3, 3):
            raise ValueError("Manhattan frame must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1) > 1e-6:
            raise ValueError("Manhattan frame must be a proper rotation")
        self.rotation = R

    @property
    def axes(self) -> np.ndarray:
        """The six signed axes, shape [6, 3]."""
        R = self.rotation
        return np.concatenate([R.T, -R.T])


def valid_mask(depth: DepthMap | np.ndarray) -> np.ndarray:
    d = depth.depth if isinstance(depth, DepthMap) else np.asarray(depth, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        return np.isfinite(d) & (d > 0)


def backproject(depth: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Camera-space points [H, W, 3] for pixel centres; NaN where depth is invalid."""
    H, W = depth.shape
    u = (np.arange(W) + 0.5 - k.cx) / k.fx
    v = (np.arange(H) + 0.5 - k.cy) / k.fy
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu * depth, vv * depth, depth], axis=-1)


def normals_from_depth(depth: DepthMap, k: Intrinsics, window: int = 5,
                       min_neighbors: int = 6, degeneracy: float = 0.9) -> NormalMap:
    """Least-squares plane normal of the back-projected points in each window.

    A pixel is invalid when its own depth is missing, when fewer than
    ``min_neighbors`` window pixels are valid, or when the two smallest
    scatter eigenvalues are too close (ratio above ``degeneracy``).
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    mask = valid_mask(depth)
    d = np.where(mask, depth.depth, np.nan)
    pts = backproject(d, k)
    r = window // 2
    padded = np.pad(pts, ((r, r), (r, r), (0, 0)), constant_values=np.nan)
    win = sliding_window_view(padded, (window, window), axis=(0, 1))   # [H, W, 3, w, w]
    H, W = d.shape
    win = win.reshape(H, W, 3, window * window).transpose(0, 1, 3, 2)   # [H, W, n, 3]
    ok = np.all(np.isfinite(win), axis=-1)
    count = ok.sum(axis=-1)
    filled = np.where(ok[..., None], win, 0.0)
    mean = filled.sum(axis=2) / np.maximum(count, 1)[..., None]
    centred = np.where(ok[..., None], win - mean[:, :, None, :], 0.0)
    scatter = np.einsum("hwni,hwnj->hwij", centred, centred)
    evals, evecs = np.linalg.eigh(scatter)                               # ascending
    n = evecs[..., :, 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(evals[..., 1] > 0, evals[..., 0] / evals[..., 1], np.inf)
    good = mask & (count >= min_neighbors) & (ratio <= degeneracy)
    # orient toward the camera: n . ray < 0, and the ray to a pixel is its 3D point
    centre = np.where(mask[..., None], pts, 0.0)
    flip = np.einsum("hwk,hwk->hw", n, centre) > 0
    n = np.where(flip[..., None], -n, n)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return NormalMap(n, good)


def _fibonacci_hemisphere(count: int) -> np.ndarray:
    i = np.arange(count) + 0.5
    z = i / count                       # upper hemisphere; axes are sign-free
    phi = np.pi * (1 + 5 ** 0.5) * i
    r = np.sqrt(1 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _refine(dirs: np.ndarray, seed: np.ndarray, cos_tol: float) -> np.ndarray:
    dots = dirs @ seed
    near = np.abs(dots) >= cos_tol
    if not near.any():
        return seed
    aligned = dirs[near] * np.sign(dots[near])[:, None]
    m = aligned.sum(axis=0)
    return m / np.linalg.norm(m)


def estimate_manhattan_frame(normals: NormalMap, bin_deg: float = 10.0,
                             min_pixels: int = 100, max_samples: int = 20000) -> ManhattanFrame:
    """Greedy mode finding of the dominant orthogonal normal directions."""
    dirs = normals.normals[normals.mask]
    if len(dirs) < min_pixels:
        raise ValueError(f"need at least {min_pixels} valid normals, got {len(dirs)}")
    if len(dirs) > max_samples:
        dirs = dirs[:: int(np.ceil(len(dirs) / max_samples))]
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    cos_tol = np.cos(np.deg2rad(bin_deg))
    cand = _fibonacci_hemisphere(4000)
    # include the data directions themselves so exact modes are representable
    cand = np.concatenate([cand, dirs[:: max(1, len(dirs) // 2000)]])
    support = (np.abs(dirs @ cand.T) >= cos_tol).sum(axis=0)
    a1 = _refine(dirs, cand[int(np.argmax(support))], cos_tol)

    sin_tol = np.sin(np.deg2rad(bin_deg))
    ortho = np.abs(cand @ a1) <= sin_tol
    if not ortho.any():
        raise ValueError("no candidate direction orthogonal to the dominant axis")
    support2 = np.where(ortho, support, -1)
    a2 = _refine(dirs, cand[int(np.argmax(support2))], cos_tol)
    a2 = a2 - (a2 @ a1) * a1
    a2 /= np.linalg.norm(a2)
    a3 = np.cross(a1, a2)
    return ManhattanFrame(np.stack([a1, a2, a3], axis=1))


def rectify_normals(normals: NormalMap, frame: ManhattanFrame) -> NormalMap:
    """Snap each valid normal to the angularly nearest signed frame axis."""
    axes = frame.axes
    n = np.where(normals.mask[..., None], normals.normals, 0.0)
    best = np.argmax(n @ axes.T, axis=-1)
    return NormalMap(axes[best], normals.mask.copy())


def interior_mask(normals: NormalMap, window: int = 5, tol: float = 1e-6,
                  depth: DepthMap | None = None, k: Intrinsics | None = None) -> np.ndarray:
    """Pixels whose whole window is valid and lies on a single planar facet.

    With ``depth`` and ``k`` given, window pixels must also share the plane
    offset, which separates parallel surfaces at a depth discontinuity.
    """
    r = window // 2
    n = np.where(normals.mask[..., None], normals.normals, np.nan)
    if depth is not None:
        pts = backproject(np.where(valid_mask(depth), depth.depth, np.nan), k)
        n = np.concatenate([n, np.einsum("hwk,hwk->hw", n, pts)[..., None]], axis=-1)
    padded = np.pad(n, ((r, r), (r, r), (0, 0)), constant_values=np.nan)
    win = sliding_window_view(padded, (window, window), axis=(0, 1))     # [H, W, c, w, w]
    dev = np.abs(win - n[..., None, None])
    with np.errstate(invalid="ignore"):
        same = np.all(dev <= tol, axis=(2, 3, 4))
    return same & normals.mask

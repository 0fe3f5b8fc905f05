"""Triangle meshes, pinhole cameras and a vectorized ray caster.

Camera space is right-handed with the camera looking along +z, image x to the
right and image y down.  Rendered normals always face the camera, so a
fronto-parallel surface has normal (0, 0, -1).
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Malformed or degenerate mesh input."""


@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    model_id: str = ""
    label: str = ""
    style_family: str = ""
    albedo: tuple[float, float, float] | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) == 0 or len(self.vertices) == 0:
            raise MeshError("empty mesh")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise MeshError("triangle index out of range")
        if np.any(triangle_areas(self.vertices, self.triangles) <= 1e-12):
            raise MeshError("mesh contains a zero-area triangle")

    @property
    def corners(self) -> np.ndarray:
        """Triangle corner coordinates, shape [T, 3, 3]."""
        return self.vertices[self.triangles]

    def color(self) -> np.ndarray:
        if self.albedo is not None:
            return np.asarray(self.albedo, dtype=np.float64)
        return family_albedo(self.style_family)


def family_albedo(style_family: str) -> np.ndarray:
    """Deterministic RGB albedo in [0.35, 1] derived from a style family id."""
    h = hashlib.sha256(style_family.encode("utf-8")).digest()
    return 0.35 + 0.65 * np.frombuffer(h[:3], dtype=np.uint8) / 255.0


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    c = vertices[triangles]
    return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)


def normalize_vertices(vertices: np.ndarray) -> np.ndarray:
    """Recentre to the bounding-box centre and scale to unit maximum extent."""
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0:
        raise MeshError("mesh has zero extent")
    return (vertices - (lo + hi) / 2.0) / extent


def load_obj(data: bytes | str, model_id: str = "", label: str = "",
             style_family: str = "") -> TriMesh:
    """Parse the ``v``/``f`` subset of Wavefront OBJ; polygons are fan-triangulated."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    verts, tris = [], []
    for lineno, raw in enumerate(io.StringIO(data), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) < 3:
                raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(r) for r in rest[:3]])
            except ValueError:
                raise MeshError(f"line {lineno}: bad vertex coordinate") from None
        elif tag == "f":
            if len(rest) < 3:
                raise MeshError(f"line {lineno}: face needs at least 3 indices")
            try:
                idx = [int(r.split("/")[0]) for r in rest]
            except ValueError:
                raise MeshError(f"line {lineno}: bad face index") from None
            out = []
            for i in idx:
                if i == 0:
                    raise MeshError(f"line {lineno}: face index 0 (OBJ indices are 1-based)")
                # negative indices are relative to the vertices read so far
                out.append(i - 1 if i > 0 else len(verts) + i)
            if any(i < 0 or i >= len(verts) for i in out):
                raise MeshError(f"line {lineno}: face index out of range")
            for k in range(1, len(out) - 1):
                tris.append([out[0], out[k], out[k + 1]])
        elif tag in ("vn", "vt", "o", "g", "s", "usemtl", "mtllib", "l"):
            continue
        else:
            raise MeshError(f"line {lineno}: unsupported statement {tag!r}")
    if not verts or not tris:
        raise MeshError("empty mesh")
    v = normalize_vertices(np.asarray(verts, dtype=np.float64))
    t = np.asarray(tris, dtype=np.int64)
    t = t[triangle_areas(v, t) > 1e-12]
    if len(t) == 0:
        raise MeshError("mesh has no non-degenerate triangles")
    return TriMesh(v, t, model_id=model_id, label=label, style_family=style_family)


def dump_obj(mesh: TriMesh) -> str:
    lines = [f"# {mesh.model_id}"] if mesh.model_id else []
    lines += ["v {!r} {!r} {!r}".format(*map(float, v)) for v in mesh.vertices]
    lines += ["f {} {} {}".format(*(t + 1)) for t in mesh.triangles]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ViewPose:
    azimuth_deg: float
    elevation_deg: float = 0.0
    radius: float = 2.5

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not -90.0 < self.elevation_deg < 90.0:
            raise ValueError("elevation must lie strictly between -90 and 90 degrees")
        object.__setattr__(self, "azimuth_deg", float(self.azimuth_deg) % 360.0)

    def eye(self) -> np.ndarray:
        a, e = np.deg2rad(self.azimuth_deg), np.deg2rad(self.elevation_deg)
        return self.radius * np.array([np.cos(e) * np.sin(a), np.sin(e), np.cos(e) * np.cos(a)])


@dataclass(frozen=True)
class Camera:
    width: int = 64
    height: int = 64
    fov_deg: float = 50.0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("camera needs at least 8x8 pixels")
        if not 0 < self.fov_deg < 180:
            raise ValueError("field of view must be in (0, 180) degrees")

    @property
    def focal(self) -> float:
        return (self.height / 2.0) / np.tan(np.deg2rad(self.fov_deg) / 2.0)

    def intrinsics(self):
        from .depth_normals import Intrinsics
        f = self.focal
        return Intrinsics(f, f, self.width / 2.0, self.height / 2.0)

    def ray_directions(self) -> np.ndarray:
        """Per-pixel ray directions (z = 1), shape [H, W, 3]."""
        f = self.focal
        u = (np.arange(self.width) + 0.5 - self.width / 2.0) / f
        v = (np.arange(self.height) + 0.5 - self.height / 2.0) / f
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, vv, np.ones_like(uu)], axis=-1)


@dataclass
class DepthMap:
    depth: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.depth = np.where(self.mask, self.depth, np.nan)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @classmethod
    def from_array(cls, depth: np.ndarray) -> "DepthMap":
        depth = np.asarray(depth, dtype=np.float64)
        return cls(depth, np.isfinite(depth) & (depth > 0))


@dataclass
class NormalMap:
    normals: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.normals = np.asarray(self.normals, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.normals = np.where(self.mask[..., None], self.normals, np.nan)

    @property
    def height(self) -> int:
        return self.normals.shape[0]

    @property
    def width(self) -> int:
        return self.normals.shape[1]

    @classmethod
    def from_array(cls, normals: np.ndarray) -> "NormalMap":
        normals = np.asarray(normals, dtype=np.float64)
        return cls(normals, np.all(np.isfinite(normals), axis=-1))

    @classmethod
    def constant(cls, height: int, width: int, n=(0.0, 0.0, -1.0)) -> "NormalMap":
        arr = np.broadcast_to(np.asarray(n, dtype=np.float64), (height, width, 3)).copy()
        return cls(arr, np.ones((height, width), dtype=bool))


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera rotation whose rows are the camera x (right), y (down), z (forward) axes."""
    eye, target, up = (np.asarray(a, dtype=np.float64) for a in (eye, target, up))
    z = target - eye
    z = z / np.linalg.norm(z)
    x = np.cross(z, up)
    n = np.linalg.norm(x)
    if n < 1e-12:
        raise ValueError("view direction parallel to the up vector")
    x = x / n
    y = np.cross(z, x)
    return np.stack([x, y, z])


@dataclass
class RayHits:
    depth: np.ndarray      # [H, W] with NaN where no hit
    normals: np.ndarray    # [H, W, 3] camera-space, NaN where no hit
    triangle: np.ndarray   # [H, W] index into the (canonically sorted) input, -1 where no hit
    mask: np.ndarray       # [H, W]

    def depth_map(self) -> DepthMap:
        return DepthMap(self.depth, self.mask)

    def normal_map(self) -> NormalMap:
        return NormalMap(self.normals, self.mask)


def _canonical_order(corners: np.ndarray) -> np.ndarray:
    """Order triangles by their sorted corner coordinates so results do not depend on input order."""
    keys = [tuple(sorted(map(tuple, c))) for c in np.round(corners, 12).tolist()]
    return np.array(sorted(range(len(keys)), key=keys.__getitem__), dtype=np.int64)


def raycast(corners_world: np.ndarray, rotation: np.ndarray, eye: np.ndarray,
            cam: Camera, chunk: int = 256) -> RayHits:
    """Nearest ray-triangle hit per pixel (Moller-Trumbore test).

    ``corners_world`` is [T, 3, 3].  Returned ``triangle`` indices refer to the
    input order.
    """
    order = _canonical_order(corners_world)
    tri_w = corners_world[order]
    tri_c = (tri_w - eye) @ rotation.T
    face_n = np.cross(tri_w[:, 1] - tri_w[:, 0], tri_w[:, 2] - tri_w[:, 0])
    face_n /= np.linalg.norm(face_n, axis=1, keepdims=True)
    face_n_cam = face_n @ rotation.T

    dirs = cam.ray_directions().reshape(-1, 3)
    P = len(dirs)
    best_t = np.full(P, np.inf)
    best_i = np.full(P, -1, dtype=np.int64)
    eps = 1e-12
    for s in range(0, len(tri_c), chunk):
        v0, v1, v2 = (tri_c[s:s + chunk, k] for k in range(3))
        e1, e2 = v1 - v0, v2 - v0
        pvec = np.cross(dirs[:, None, :], e2[None, :, :])          # [P, t, 3]
        det = np.einsum("ptk,tk->pt", pvec, e1)
        ok = np.abs(det) > eps
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = -v0                                                  # ray origin is the camera centre
        u = np.einsum("ptk,tk->pt", pvec, tvec) * inv
        qvec = np.cross(tvec, e1)                                   # [t, 3]
        v = (dirs @ qvec.T) * inv
        t = (e2 * qvec).sum(axis=1)[None, :] * inv
        tol = 1e-9
        hit = ok & (u >= -tol) & (v >= -tol) & (u + v <= 1 + tol) & (t > 1e-9)
        t = np.where(hit, t, np.inf)
        j = t.argmin(axis=1)
        tj = t[np.arange(P), j]
        better = tj < best_t
        best_t[better] = tj[better]
        best_i[better] = j[better] + s

    H, W = cam.height, cam.width
    mask = np.isfinite(best_t)
    depth = np.where(mask, best_t, np.nan)
    n = np.full((P, 3), np.nan)
    n[mask] = face_n_cam[best_i[mask]]
    flip = np.einsum("pk,pk->p", np.where(mask[:, None], n, 0.0), dirs) > 0
    n[flip] *= -1.0
    tri = np.where(mask, order[np.maximum(best_i, 0)], -1)
    return RayHits(depth.reshape(H, W), n.reshape(H, W, 3), tri.reshape(H, W), mask.reshape(H, W))


def render_view(mesh: TriMesh, pose: ViewPose, cam: Camera) -> tuple[DepthMap, NormalMap]:
    """Ray-cast ``mesh`` from ``pose``; depth is measured along the camera axis."""
    hits = render_hits(mesh, pose, cam)
    return hits.depth_map(), hits.normal_map()


def render_hits(mesh: TriMesh, pose: ViewPose, cam: Camera) -> RayHits:
    eye = pose.eye()
    return raycast(mesh.corners, look_at(eye), eye, cam)


def sample_views(n_elev: int = 4, n_azim: int = 36, elevations=None,
                 radius: float = 2.5) -> list[ViewPose]:
    if n_azim < 1 or 360 % n_azim:
        raise ValueError(f"n_azim={n_azim} does not divide 360")
    if elevations is None:
        elevations = [10.0 * i for i in range(n_elev)]
    elevations = list(elevations)
    if len(elevations) != n_elev:
        raise ValueError("need exactly n_elev elevations")
    step = 360 // n_azim
    return [ViewPose(a * step, e, radius) for e in elevations for a in range(n_azim)]


def composite_background(render: np.ndarray, mask: np.ndarray, background: np.ndarray) -> np.ndarray:
    render, background = np.asarray(render), np.asarray(background)
    mask = np.asarray(mask, dtype=bool)
    if render.shape != background.shape or render.shape[:2] != mask.shape:
        raise ValueError(f"shape mismatch: render {render.shape}, mask {mask.shape}, "
                         f"background {background.shape}")
    m = mask[..., None] if render.ndim == 3 else mask
    return np.where(m, render, background)


def shade_normals(normals: NormalMap, albedo, light_dir, ambient: float = 0.2) -> np.ndarray:
    """Lambertian shading of a camera-space normal map into an RGB image in [0, 255]."""
    l = np.asarray(light_dir, dtype=np.float64)
    if abs(np.linalg.norm(l) - 1.0) > 1e-6:
        raise ValueError("light_dir must be a unit vector")
    albedo = np.asarray(albedo, dtype=np.float64)
    n = np.where(normals.mask[..., None], normals.normals, 0.0)
    lam = np.maximum(0.0, -(n @ l))
    rgb = 255.0 * (lam[..., None] + ambient) * albedo
    rgb = np.where(normals.mask[..., None], rgb, 0.0)
    return np.clip(rgb, 0.0, 255.0).astype(np.float32)


DEFAULT_LIGHT = tuple(np.array([0.3, 0.6, 0.74]) / np.linalg.norm([0.3, 0.6, 0.74]))


def shade_view(mesh: TriMesh, pose: ViewPose, cam: Camera, light_dir=DEFAULT_LIGHT,
               albedo=None) -> tuple[np.ndarray, np.ndarray]:
    """Shaded RGB image and foreground mask of ``mesh`` seen from ``pose``."""
    _, normals = render_view(mesh, pose, cam)
    a = mesh.color() if albedo is None else albedo
    return shade_normals(normals, a, light_dir), normals.mask

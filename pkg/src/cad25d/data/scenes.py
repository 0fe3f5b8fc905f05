"""Synthetic indoor scenes: a floor and two walls furnished with procedural models."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..render import (DEFAULT_LIGHT, Camera, DepthMap, NormalMap, look_at, raycast,
                      shade_normals)
from ..retrieval import BoundingBox
from .furniture import CLASSES, FurnitureParams, build_cuboids, CUBOID_FACES, random_params

log = logging.getLogger(__name__)


@dataclass
class ObjectAnnotation:
    object_id: int
    cls: str
    box: BoundingBox
    azimuth_deg: float
    elevation_deg: float
    model_id: str
    style_family: str
    mask: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return dict(object_id=self.object_id, cls=self.cls, box=list(self.box),
                    azimuth_deg=self.azimuth_deg, elevation_deg=self.elevation_deg,
                    model_id=self.model_id, style_family=self.style_family)


@dataclass
class SceneSample:
    scene_id: str
    image: np.ndarray              # [H, W, 3] float32 in [0, 255]
    depth: DepthMap
    normals: NormalMap
    objects: list[ObjectAnnotation]
    object_index: np.ndarray       # [H, W] object id per pixel, -1 for room or background
    skipped: int = 0

    def validate(self) -> None:
        shapes = {self.image.shape[:2], self.depth.depth.shape, self.normals.normals.shape[:2]}
        if len(shapes) != 1:
            raise ValueError(f"scene {self.scene_id}: map shapes differ {shapes}")
        for o in self.objects:
            ys, xs = np.nonzero(o.mask)
            b = o.box
            if len(ys) and (xs.min() < b.x or ys.min() < b.y or xs.max() >= b.x + b.w or ys.max() >= b.y + b.h):
                raise ValueError(f"scene {self.scene_id}: object {o.object_id} mask leaves its box")

    def class_masks(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for o in self.objects:
            out[o.cls] = out.get(o.cls, np.zeros_like(o.mask)) | o.mask
        return out


@dataclass(frozen=True)
class SceneConfig:
    width: int = 64
    height: int = 64
    fov_deg: float = 60.0
    room_width: float = 4.0
    room_depth: float = 5.0
    wall_height: float = 2.6
    classes: tuple[str, ...] = CLASSES
    depth_dropout: float = 0.0


def _quad(a, b, c, d) -> np.ndarray:
    return np.array([[a, b, c], [a, c, d]], dtype=np.float64)


def _rot_y(deg: float) -> np.ndarray:
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def room_triangles(cfg: SceneConfig) -> np.ndarray:
    hw, D, Hh = cfg.room_width / 2, cfg.room_depth, cfg.wall_height
    floor = _quad((-hw, 0, 1.0), (hw, 0, 1.0), (hw, 0, -D), (-hw, 0, -D))
    back = _quad((-hw, 0, -D), (hw, 0, -D), (hw, Hh, -D), (-hw, Hh, -D))
    left = _quad((-hw, 0, 1.0), (-hw, 0, -D), (-hw, Hh, -D), (-hw, Hh, 1.0))
    return np.concatenate([floor, back, left])


def generate_scene(rng: np.random.Generator, n_objects: int = 2, cfg: SceneConfig = SceneConfig(),
                   scene_id: str = "scene", max_attempts: int = 100,
                   params: list[FurnitureParams] | None = None) -> SceneSample:
    """Random furnished room rendered from a random camera.

    Objects that cannot be placed without overlap after ``max_attempts`` tries
    are skipped and counted in ``SceneSample.skipped``.
    """
    if n_objects < 1:
        raise ValueError("a scene needs at least one object")
    hw, D = cfg.room_width / 2, cfg.room_depth
    tri_list = [room_triangles(cfg)]
    owner = [np.full(6, -1)]
    placed: list[tuple[float, float, float]] = []
    meta = []
    skipped = 0
    for k in range(n_objects):
        p = params[k] if params is not None else random_params(str(rng.choice(cfg.classes)), rng)
        parts = build_cuboids(p, seed=int(rng.integers(2**31)))
        verts = np.concatenate(parts)
        lo, hi = verts.min(axis=0), verts.max(axis=0)
        verts = verts - np.array([(lo[0] + hi[0]) / 2, 0.0, (lo[2] + hi[2]) / 2])
        radius = 0.5 * float(np.hypot(hi[0] - lo[0], hi[2] - lo[2]))
        for _ in range(max_attempts):
            x = rng.uniform(-hw + radius, hw - radius) if hw > radius else None
            z = rng.uniform(-D + radius, -1.2 - radius) if D - 1.2 > 2 * radius else None
            if x is None or z is None:
                break
            if all(np.hypot(x - px, z - pz) > radius + pr for px, pz, pr in placed):
                break
        else:
            x = None
        if x is None or z is None:
            skipped += 1
            continue
        yaw = float(rng.uniform(-90.0, 90.0))
        world = verts @ _rot_y(yaw).T + np.array([x, 0.0, z])
        tris = world[np.concatenate([CUBOID_FACES + 8 * i for i in range(len(parts))])]
        tri_list.append(tris)
        owner.append(np.full(len(tris), len(meta)))
        placed.append((x, z, radius))
        meta.append((p, yaw, np.array([x, 0.5 * (hi[1] - lo[1]), z])))
    if skipped:
        log.warning("scene %s: skipped %d unplaceable objects", scene_id, skipped)

    eye = np.array([rng.uniform(0.2, 1.4), rng.uniform(1.2, 1.7), rng.uniform(0.2, 0.8)])
    if placed:
        centre = np.mean([[px, 0.4, pz] for px, pz, _ in placed], axis=0)
    else:
        centre = np.array([0.0, 0.4, -D / 2])
    target = centre + rng.normal(scale=0.2, size=3) * np.array([1, 0, 1])
    R = look_at(eye, target)
    cam = Camera(cfg.width, cfg.height, cfg.fov_deg)
    corners = np.concatenate(tri_list)
    owners = np.concatenate(owner)
    hits = raycast(corners, R, eye, cam)
    obj_index = np.where(hits.mask, owners[np.maximum(hits.triangle, 0)], -1)

    albedo = np.zeros((cfg.height, cfg.width, 3))
    room_albedo = rng.uniform(0.45, 0.85, size=(3, 3))
    tri_room = np.where(hits.triangle < 6, hits.triangle // 2, 0)
    albedo[:] = room_albedo[tri_room]
    objects = []
    for i, (p, yaw, ctr) in enumerate(meta):
        m = obj_index == i
        albedo[m] = p.albedo
        if not m.any():
            continue
        # camera position in the object's frame gives its viewpoint
        local = _rot_y(-yaw) @ (eye - ctr)
        az = float(np.degrees(np.arctan2(local[0], local[2])) % 360.0)
        el = float(np.degrees(np.arctan2(local[1], np.hypot(local[0], local[2]))))
        objects.append(ObjectAnnotation(i, p.cls, BoundingBox.from_mask(m), az, el,
                                        f"{scene_id}-obj{i}", p.style_family, m))
    normals = hits.normal_map()
    image = shade_normals(normals, albedo, DEFAULT_LIGHT)
    depth_mask = hits.mask.copy()
    if cfg.depth_dropout > 0:
        depth_mask &= rng.random(depth_mask.shape) >= cfg.depth_dropout
    depth = DepthMap(hits.depth, depth_mask)
    sample = SceneSample(scene_id, image, depth, normals, objects, obj_index, skipped)
    sample.validate()
    return sample


def scene_camera(cfg: SceneConfig) -> Camera:
    return Camera(cfg.width, cfg.height, cfg.fov_deg)


def random_background(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Smooth coloured noise plus stripes, standing in for natural-image backgrounds."""
    coarse = rng.uniform(0, 255, size=(4, 4, 3))
    ys = np.linspace(0, 3, height)
    xs = np.linspace(0, 3, width)
    y0 = np.minimum(ys.astype(int), 2)
    x0 = np.minimum(xs.astype(int), 2)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    img = (coarse[y0][:, x0] * (1 - fy) * (1 - fx) + coarse[y0 + 1][:, x0] * fy * (1 - fx)
           + coarse[y0][:, x0 + 1] * (1 - fy) * fx + coarse[y0 + 1][:, x0 + 1] * fy * fx)
    period = rng.uniform(4, 16)
    angle = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:height, 0:width]
    stripes = 25 * np.sin(2 * np.pi * (xx * np.cos(angle) + yy * np.sin(angle)) / period)
    img = img + stripes[..., None] + rng.normal(scale=8, size=img.shape)
    return np.clip(img, 0, 255).astype(np.float32)

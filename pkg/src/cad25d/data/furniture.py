"""Procedural cuboid-assembly furniture models."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from ..render import TriMesh, normalize_vertices

CLASSES = ("chair", "sofa", "bed")

# per-class (low, high) ranges in metres / degrees
RANGES = {
    "chair": dict(seat_width=(0.40, 0.60), seat_depth=(0.40, 0.60), seat_height=(0.40, 0.50),
                  back_height=(0.30, 0.60), back_tilt=(0.0, 20.0), leg_thickness=(0.03, 0.07)),
    "sofa": dict(seat_width=(1.40, 2.20), seat_depth=(0.70, 1.00), seat_height=(0.35, 0.45),
                 back_height=(0.30, 0.50), back_tilt=(0.0, 15.0), leg_thickness=(0.05, 0.10)),
    "bed": dict(seat_width=(1.40, 2.00), seat_depth=(1.90, 2.20), seat_height=(0.30, 0.50),
                back_height=(0.30, 0.80), back_tilt=(0.0, 10.0), leg_thickness=(0.05, 0.10)),
}
LEG_COUNTS = {"chair": (4,), "sofa": (4, 6), "bed": (4, 6)}
SEAT_THICKNESS = {"chair": 0.05, "sofa": 0.20, "bed": 0.25}
BACK_THICKNESS = {"chair": 0.04, "sofa": 0.15, "bed": 0.08}

# quantisation steps defining style families
QUANT = dict(seat_width=0.1, seat_depth=0.1, seat_height=0.1, back_height=0.1,
             back_tilt=10.0, leg_thickness=0.02)
ALBEDO_STEP = 0.25

CUBOID_FACES = np.array([[0, 1, 2], [0, 2, 3], [4, 6, 5], [4, 7, 6], [0, 4, 5], [0, 5, 1],
                         [1, 5, 6], [1, 6, 2], [2, 6, 7], [2, 7, 3], [3, 7, 4], [3, 4, 0]])


@dataclass(frozen=True)
class FurnitureParams:
    cls: str
    seat_width: float
    seat_depth: float
    seat_height: float
    back_height: float
    back_tilt: float
    leg_thickness: float
    leg_count: int = 4
    armrests: bool = False
    albedo: tuple[float, float, float] = (0.6, 0.5, 0.4)

    def __post_init__(self):
        if self.cls not in RANGES:
            raise ValueError(f"unknown furniture class {self.cls!r}")
        for key, (lo, hi) in RANGES[self.cls].items():
            v = getattr(self, key)
            if not lo - 1e-9 <= v <= hi + 1e-9:
                raise ValueError(f"{self.cls} {key}={v} outside [{lo}, {hi}]")
        if self.leg_count not in LEG_COUNTS[self.cls]:
            raise ValueError(f"{self.cls} cannot have {self.leg_count} legs")
        if len(self.albedo) != 3 or not all(0.0 < a <= 1.0 for a in self.albedo):
            raise ValueError("albedo components must be in (0, 1]")

    def style_vector(self) -> tuple:
        q = tuple(int(np.floor(getattr(self, k) / s + 1e-9)) for k, s in QUANT.items())
        a = tuple(int(min(np.floor(c / ALBEDO_STEP), 3)) for c in self.albedo)
        return (self.cls, *q, self.leg_count, int(self.armrests), *a)

    @property
    def style_family(self) -> str:
        return "-".join(str(v) for v in self.style_vector())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["albedo"] = list(self.albedo)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FurnitureParams":
        d = dict(d)
        d["albedo"] = tuple(d["albedo"])
        return cls(**d)


def random_params(cls: str, rng: np.random.Generator) -> FurnitureParams:
    vals = {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in RANGES[cls].items()}
    return FurnitureParams(cls=cls, **vals, leg_count=int(rng.choice(LEG_COUNTS[cls])),
                           armrests=bool(rng.random() < (0.8 if cls == "sofa" else 0.3 if cls == "chair" else 0.0)),
                           albedo=tuple(float(a) for a in rng.uniform(0.3, 1.0, size=3)))


def sample_in_family(proto: FurnitureParams, rng: np.random.Generator) -> FurnitureParams:
    """Random parameters sharing every quantisation bin with ``proto``."""
    vals = {}
    for k, step in QUANT.items():
        lo, hi = RANGES[proto.cls][k]
        b = np.floor(getattr(proto, k) / step + 1e-9)
        blo, bhi = max(lo, b * step), min(hi, (b + 1) * step)
        # stay off the bin edges so floor() lands in the same bin
        margin = 0.05 * (bhi - blo)
        vals[k] = float(rng.uniform(blo + margin, bhi - margin))
    alb = []
    for c in proto.albedo:
        b = min(np.floor(c / ALBEDO_STEP), 3)
        lo, hi = max(0.05, b * ALBEDO_STEP), min(1.0, (b + 1) * ALBEDO_STEP)
        alb.append(float(rng.uniform(lo + 0.02, hi - 0.02)))
    out = replace(proto, **vals, albedo=tuple(alb))
    assert out.style_family == proto.style_family
    return out


def distinct_families(n: int, cls: str, rng: np.random.Generator, max_tries: int = 10000) -> list[FurnitureParams]:
    """``n`` prototypes with pairwise distinct style families."""
    out, seen = [], set()
    for _ in range(max_tries):
        p = random_params(cls, rng)
        if p.style_family not in seen:
            seen.add(p.style_family)
            out.append(p)
            if len(out) == n:
                return out
    raise RuntimeError(f"could not find {n} distinct style families")


def cuboid(lo, hi) -> np.ndarray:
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    return np.array([[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                     [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]], dtype=np.float64)


def _rot_x(deg: float) -> np.ndarray:
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def build_cuboids(params: FurnitureParams, seed: int = 0) -> list[np.ndarray]:
    """Corner arrays [8, 3] for every part, in metres; front faces +z, up is +y."""
    rng = np.random.default_rng(seed)
    p = params
    w, d, h = p.seat_width, p.seat_depth, p.seat_height
    st, bt, lt = SEAT_THICKNESS[p.cls], BACK_THICKNESS[p.cls], p.leg_thickness
    parts = []
    # legs: corners, plus mid-side pairs for six legs
    inset = lt * (0.5 + 0.5 * rng.random())
    xs = [-w / 2 + inset, w / 2 - inset - lt]
    zs = [-d / 2 + inset, d / 2 - inset - lt]
    spots = [(x, z) for x in xs for z in zs]
    if p.leg_count == 6:
        spots += [(-lt / 2, zs[0]), (-lt / 2, zs[1])]
    for x, z in spots:
        parts.append(cuboid((x, 0.0, z), (x + lt, h - st, z + lt)))
    parts.append(cuboid((-w / 2, h - st, -d / 2), (w / 2, h, d / 2)))
    # back, tilted backwards about its bottom edge
    back = cuboid((-w / 2, 0.0, -bt), (w / 2, p.back_height, 0.0))
    back = back @ _rot_x(-p.back_tilt).T + np.array([0.0, h, -d / 2 + bt])
    parts.append(back)
    if p.armrests:
        aw, ah = max(lt, 0.05), 0.2
        for x in (-w / 2, w / 2 - aw):
            parts.append(cuboid((x, h, -d / 2 + bt), (x + aw, h + ah, d / 2)))
    return parts


def generate_furniture(params: FurnitureParams, seed: int = 0, model_id: str = "",
                       normalize: bool = True) -> TriMesh:
    parts = build_cuboids(params, seed)
    verts = np.concatenate(parts)
    tris = np.concatenate([CUBOID_FACES + 8 * i for i in range(len(parts))])
    if normalize:
        verts = normalize_vertices(verts)
    return TriMesh(verts, tris, model_id=model_id, label=params.cls,
                   style_family=params.style_family, albedo=params.albedo)


def physical_extent(params: FurnitureParams, seed: int = 0) -> float:
    verts = np.concatenate(build_cuboids(params, seed))
    return float((verts.max(axis=0) - verts.min(axis=0)).max())

"""On-disk formats: NMF float maps, 16-bit normal PNGs and JSON dataset manifests."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from ..render import DepthMap, NormalMap
from ..retrieval import BoundingBox

NMF_MAGIC = b"NMF1"
SPLITS = ("train", "val", "test")


class FormatError(ValueError):
    """Raised for malformed or truncated files."""


def write_nmf(arr: np.ndarray) -> bytes:
    """``NMF1``, u32 LE width/height/channels, then f32 LE row-major values (NaN = invalid)."""
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise FormatError(f"expected [H, W] or [H, W, C], got {a.shape}")
    h, w, c = a.shape
    return NMF_MAGIC + struct.pack("<III", w, h, c) + np.ascontiguousarray(a, dtype="<f4").tobytes()


def read_nmf(data: bytes) -> np.ndarray:
    """Inverse of :func:`write_nmf`; always returns [H, W, C] float32."""
    if len(data) < 16 or data[:4] != NMF_MAGIC:
        raise FormatError("not an NMF1 container")
    w, h, c = struct.unpack("<III", data[4:16])
    need = 16 + 4 * w * h * c
    if len(data) != need:
        raise FormatError(f"NMF payload is {len(data)} bytes, expected {need}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w, c).astype(np.float32)


def normal_map_to_nmf(nm: NormalMap) -> bytes:
    return write_nmf(np.where(nm.mask[..., None], nm.normals, np.nan))


def nmf_to_normal_map(data: bytes) -> NormalMap:
    a = read_nmf(data).astype(np.float64)
    if a.shape[2] != 3:
        raise FormatError(f"normal map needs 3 channels, got {a.shape[2]}")
    return NormalMap.from_array(a)


def depth_map_to_nmf(dm: DepthMap) -> bytes:
    return write_nmf(np.where(dm.mask, dm.depth, np.nan))


def nmf_to_depth_map(data: bytes) -> DepthMap:
    a = read_nmf(data)
    if a.shape[2] != 1:
        raise FormatError(f"depth map needs 1 channel, got {a.shape[2]}")
    return DepthMap.from_array(a[..., 0].astype(np.float64))


def encode_png16(nm: NormalMap | np.ndarray) -> bytes:
    """16-bit RGBA PNG; ``v = floor((n + 1) / 2 * 65535 + 0.5)``, invalid pixels are transparent black."""
    if not isinstance(nm, NormalMap):
        nm = NormalMap.from_array(np.asarray(nm, dtype=np.float64))
    n = np.where(nm.mask[..., None], nm.normals, 0.0)
    v = np.floor((np.clip(n, -1.0, 1.0) + 1.0) / 2.0 * 65535.0 + 0.5).astype(np.uint16)
    v[~nm.mask] = 0
    alpha = np.where(nm.mask, 65535, 0).astype(np.uint16)
    rgba = np.dstack([v, alpha])
    # cv2 stores channels as BGR(A)
    ok, buf = cv2.imencode(".png", rgba[..., [2, 1, 0, 3]])
    if not ok:
        raise FormatError("PNG encoding failed")
    return buf.tobytes()


def decode_png16(data: bytes) -> NormalMap:
    if not data.startswith(b"\x89PNG\r\n\x1a\n"):
        raise FormatError("not a PNG file")
    img = cv2.imdecode(np.frombuffer(data, np.uint8), cv2.IMREAD_UNCHANGED)
    if img is None or img.dtype != np.uint16 or img.ndim != 3 or img.shape[2] != 4:
        raise FormatError("expected a 16-bit RGBA PNG")
    rgba = img[..., [2, 1, 0, 3]].astype(np.float64)
    mask = rgba[..., 3] > 0
    n = rgba[..., :3] / 65535.0 * 2.0 - 1.0
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    n = np.where(mask[..., None] & (norm > 0), n / np.where(norm > 0, norm, 1.0), np.nan)
    return NormalMap(n, mask)


def encode_png8(image: np.ndarray) -> bytes:
    ok, buf = cv2.imencode(".png", np.clip(np.rint(image), 0, 255).astype(np.uint8)[..., ::-1])
    if not ok:
        raise FormatError("PNG encoding failed")
    return buf.tobytes()


def decode_png8(data: bytes) -> np.ndarray:
    img = cv2.imdecode(np.frombuffer(data, np.uint8), cv2.IMREAD_COLOR)
    if img is None:
        raise FormatError("not a readable PNG")
    return img[..., ::-1].astype(np.float32)


# -- manifests -----------------------------------------------------------------------

@dataclass
class DatasetManifest:
    """Records of relative file paths plus annotations, each tagged with a split.

    ``kind`` is ``"scenes"`` or ``"models"``; ``meta`` holds generation
    settings (config, seed, camera) so later stages can reproduce them.
    """

    root: Path
    kind: str
    records: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def split(self, tag: str) -> list[dict]:
        if tag not in SPLITS:
            raise ValueError(f"unknown split {tag!r}")
        return [r for r in self.records if r["split"] == tag]

    def path(self, rel: str) -> Path:
        return self.root / rel

    def validate(self) -> None:
        seen = set()
        for r in self.records:
            if r.get("split") not in SPLITS:
                raise FormatError(f"record {r.get('id')!r} has split {r.get('split')!r}")
            if r["id"] in seen:
                raise FormatError(f"duplicate record id {r['id']!r}")
            seen.add(r["id"])
            for key in ("image", "depth", "normals", "objects_index", "obj"):
                if key in r and not self.path(r[key]).is_file():
                    raise FormatError(f"record {r['id']!r}: missing file {r[key]}")

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "meta": self.meta, "records": self.records},
                          indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
            m = cls(path.parent, d["kind"], list(d["records"]), dict(d.get("meta", {})))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"cannot read manifest {path}: {exc}") from exc
        m.validate()
        return m


def load_scene_record(manifest: DatasetManifest, rec: dict):
    """Image, depth, normals, object-index map and annotations of one scene record."""
    image = decode_png8(manifest.path(rec["image"]).read_bytes())
    depth = nmf_to_depth_map(manifest.path(rec["depth"]).read_bytes())
    normals = nmf_to_normal_map(manifest.path(rec["normals"]).read_bytes())
    index = read_nmf(manifest.path(rec["objects_index"]).read_bytes())[..., 0].astype(np.int64)
    objects = []
    for o in rec["objects"]:
        box = BoundingBox(*o["box"])
        mask = index == o["object_id"]
        ys, xs = np.nonzero(mask)
        if len(ys) and (xs.min() < box.x or ys.min() < box.y or xs.max() >= box.x + box.w
                        or ys.max() >= box.y + box.h):
            raise FormatError(f"scene {rec['id']}: object {o['object_id']} mask leaves its box")
        objects.append(dict(o, box=box, mask=mask))
    if not (image.shape[:2] == depth.depth.shape == normals.normals.shape[:2] == index.shape):
        raise FormatError(f"scene {rec['id']}: map shapes differ")
    return image, depth, normals, index, objects


def assign_splits(n: int, fractions=(0.6, 0.2, 0.2)) -> list[str]:
    """Deterministic contiguous split tags for ``n`` records."""
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return ["train"] * n_train + ["val"] * n_val + ["test"] * (n - n_train - n_val)

"""Two-stream pose classifier and its siamese style extension."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import ParameterSet, Tensor, TrainConfig
from .render import Camera, NormalMap, TriMesh, ViewPose, composite_background, render_view, shade_normals
from .retrieval import BoundingBox
from .skipnet import Trunk, TrunkSpec, he_init, normalize_image

log = logging.getLogger(__name__)

N_BINS = 36
BIN_DEG = 360.0 / N_BINS


def azimuth_to_bin(azimuth_deg: float, n_bins: int = N_BINS) -> int:
    return int(np.floor((float(azimuth_deg) % 360.0) / (360.0 / n_bins))) % n_bins


def bin_to_azimuth(b: int, n_bins: int = N_BINS) -> float:
    return float(b) * 360.0 / n_bins


@dataclass
class NormalImageEncoding:
    """Per-channel means of normals mapped to [0, 255]."""

    means: tuple[float, float, float] = (127.5, 127.5, 127.5)

    def __post_init__(self):
        m = tuple(float(v) for v in self.means)
        if len(m) != 3 or not all(0.0 <= v <= 255.0 for v in m):
            raise ValueError("channel means must be three values in [0, 255]")
        self.means = m

    @classmethod
    def fit(cls, maps) -> "NormalImageEncoding":
        total, count = np.zeros(3), 0
        for nm in maps:
            n = nm.normals[nm.mask] if isinstance(nm, NormalMap) else \
                np.asarray(nm)[np.all(np.isfinite(nm), axis=-1)]
            total += (127.5 * (n + 1.0)).sum(axis=0)
            count += len(n)
        if count == 0:
            return cls()
        return cls(tuple(total / count))


def normals_to_pixels(normals: NormalMap | np.ndarray, enc: NormalImageEncoding) -> np.ndarray:
    """``127.5 (n + 1)`` per channel, with invalid pixels set to the channel mean."""
    arr = normals.normals if isinstance(normals, NormalMap) else np.asarray(normals, dtype=np.float64)
    valid = np.all(np.isfinite(arr), axis=-1)
    if isinstance(normals, NormalMap):
        valid &= normals.mask
    mean = np.asarray(enc.means)
    return np.where(valid[..., None], 127.5 * (np.nan_to_num(arr) + 1.0), mean)


def encode_normals_as_image(normals: NormalMap | np.ndarray, enc: NormalImageEncoding) -> np.ndarray:
    """Mean-subtracted [0, 255] encoding; invalid pixels come out exactly 0."""
    return (normals_to_pixels(normals, enc) - np.asarray(enc.means)).astype(np.float32)


@dataclass
class PoseNet:
    trunk_spec: TrunkSpec = field(default_factory=lambda: TrunkSpec(deep_channels=0))
    hidden: int = 256
    embed_dim: int = 64
    n_bins: int = N_BINS
    seed: int = 0
    cls: str = "chair"

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        self.image_stream = Trunk(self.trunk_spec, rng, with_deep=False)
        self.normal_stream = Trunk(self.trunk_spec, rng, with_deep=False)
        self.params = ParameterSet()
        self.params.update(self.image_stream.params, prefix="img.")
        self.params.update(self.normal_stream.params, prefix="nrm.")
        d = 2 * self.trunk_spec.pooled_dim()
        for name, (o, i) in (("fc6", (self.hidden, d)), ("fc7", (self.embed_dim, self.hidden)),
                             ("cls", (self.n_bins, self.embed_dim))):
            self.params.add(f"{name}.w", Tensor(he_init(rng, (o, i), i)))
            self.params.add(f"{name}.b", Tensor(np.zeros(o, np.float32)))

    def _check(self, images: np.ndarray, normal_images: np.ndarray) -> None:
        s = self.trunk_spec.input_size
        if images.shape[-3:-1] != (s, s) or normal_images.shape[-3:-1] != (s, s):
            raise nn.DimensionError(f"inputs {images.shape}/{normal_images.shape} do not match trunk size {s}")

    def embed(self, images, normal_images, training: bool = False, rng=None,
              dropout_prob: float = 0.0) -> Tensor:
        """fc7 response (the style embedding) for a batch [B,H,W,3] of image/normal pairs."""
        images = np.asarray(images, dtype=np.float32)
        normal_images = np.asarray(normal_images, dtype=np.float32)
        if images.ndim == 3:
            images, normal_images = images[None], normal_images[None]
        self._check(images, normal_images)
        B = images.shape[0]
        a = self.image_stream.forward(Tensor(normalize_image(images)), pool_last=True)["pool"]
        # encoded normals are already mean-subtracted in [-255, 255]
        nx = Tensor(np.ascontiguousarray(normal_images.transpose(0, 3, 1, 2) / np.float32(127.5)))
        b = self.normal_stream.forward(nx, pool_last=True)["pool"]
        h = nn.concat([a.reshape(B, -1), b.reshape(B, -1)], axis=1)
        p = self.params
        h = nn.fully_connected(h, p["fc6.w"], p["fc6.b"], apply_relu=True)
        h = nn.dropout(h, dropout_prob, training, rng)
        return nn.fully_connected(h, p["fc7.w"], p["fc7.b"], apply_relu=True)

    def logits(self, images, normal_images, training: bool = False, rng=None,
               dropout_prob: float = 0.0) -> Tensor:
        f = self.embed(images, normal_images, training, rng, dropout_prob)
        f = nn.dropout(f, dropout_prob, training, rng)
        return nn.linear(f, self.params["cls.w"], self.params["cls.b"])

    def state(self) -> dict[str, np.ndarray]:
        return self.params.state()

    def load_state(self, state) -> None:
        self.params.load_state(state)


def pose_forward(net: PoseNet, image, normal_image) -> np.ndarray:
    """Softmax over azimuth bins; batched input gives one row per sample."""
    z = net.logits(image, normal_image).data.astype(np.float64)
    p = nn.softmax(z)
    return p[0] if np.asarray(image).ndim == 3 else p


def predict_pose(net: PoseNet, image, normal_image) -> int | np.ndarray:
    """Arg-max bin; ``np.argmax`` returns the lowest index among ties."""
    p = pose_forward(net, image, normal_image)
    return int(np.argmax(p)) if p.ndim == 1 else np.argmax(p, axis=-1)


def predict_in_batches(net: PoseNet, images, normal_images, batch: int = 64) -> np.ndarray:
    return np.concatenate([np.atleast_1d(predict_pose(net, images[i:i + batch], normal_images[i:i + batch]))
                           for i in range(0, len(images), batch)])


def crop_square(arr: np.ndarray, box: BoundingBox, size: int, fill, pad: float = 0.1) -> np.ndarray:
    """Nearest-neighbour resample of a padded square around ``box`` to ``size`` x ``size``.

    Samples falling outside ``arr`` take the value ``fill``.
    """
    side = max(box.w, box.h) * (1.0 + 2.0 * pad)
    cy, cx = box.y + box.h / 2.0, box.x + box.w / 2.0
    t = (np.arange(size) + 0.5) / size * side - side / 2.0
    ys = np.floor(cy + t).astype(np.int64)
    xs = np.floor(cx + t).astype(np.int64)
    H, W = arr.shape[:2]
    iny, inx = (ys >= 0) & (ys < H), (xs >= 0) & (xs < W)
    out = arr[np.clip(ys, 0, H - 1)][:, np.clip(xs, 0, W - 1)].copy()
    out[~(iny[:, None] & inx[None, :])] = fill
    return out


def crop_inputs(image: np.ndarray, normals: NormalMap, box: BoundingBox, size: int,
                enc: NormalImageEncoding, pad: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Network-ready (image, encoded normal image) crops of one object."""
    img = crop_square(np.asarray(image, dtype=np.float32), box, size, 127.5, pad)
    n = np.where(normals.mask[..., None], normals.normals, np.nan)
    n = crop_square(n, box, size, np.nan, pad)
    return img.astype(np.float32), encode_normals_as_image(n, enc)


@dataclass
class RenderedView:
    """One shaded render of a model with its normals and azimuth label."""

    model_id: str
    pose: ViewPose
    image: np.ndarray       # [H, W, 3], background 0
    normals: NormalMap

    @property
    def box(self) -> BoundingBox:
        return BoundingBox.from_mask(self.normals.mask)


def render_model_views(mesh: TriMesh, poses, cam: Camera, light_dir) -> list[RenderedView]:
    out = []
    for pose in poses:
        _, nm = render_view(mesh, pose, cam)
        if nm.mask.any():
            out.append(RenderedView(mesh.model_id, pose, shade_normals(nm, mesh.color(), light_dir), nm))
    return out


def build_pose_dataset(views: list[RenderedView], enc: NormalImageEncoding, size: int,
                       rng: np.random.Generator, composites: int = 2, background_fn=None,
                       normals_fn=None) -> "PoseDataset":
    """Crop each view over ``composites`` random backgrounds.

    ``normals_fn(view)`` may replace the rendered normals (for example with a
    network prediction); by default the rendered normals are used.
    """
    imgs, nrms, bins, ids = [], [], [], []
    for v in views:
        nm = v.normals if normals_fn is None else normals_fn(v)
        box = v.box
        for _ in range(max(1, composites)):
            img = v.image
            if background_fn is not None:
                bg = background_fn(rng, *img.shape[:2])
                img = composite_background(img, v.normals.mask, bg)
            a, b = crop_inputs(img, nm, box, size, enc)
            imgs.append(a)
            nrms.append(b)
            bins.append(azimuth_to_bin(v.pose.azimuth_deg))
            ids.append(v.model_id)
    return PoseDataset(np.stack(imgs), np.stack(nrms), np.asarray(bins), ids)


@dataclass
class PoseDataset:
    images: np.ndarray          # [N, s, s, 3] float32
    normal_images: np.ndarray   # [N, s, s, 3] encoded, mean-subtracted
    bins: np.ndarray            # [N]
    model_ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.bins)


def pose_loss(net: PoseNet, images, normal_images, bins, training=False, rng=None,
              dropout_prob: float = 0.0) -> Tensor:
    return nn.softmax_loss(net.logits(images, normal_images, training, rng, dropout_prob), np.asarray(bins))


def train_pose(net: PoseNet, data: PoseDataset, config: TrainConfig, log_every: int = 100,
               curve: list | None = None) -> PoseNet:
    """Mini-batch momentum SGD on the mean softmax loss over both streams and the FC layers."""
    if len(np.unique(data.bins)) < 2:
        raise ValueError("pose training needs at least two distinct bins")
    rng = np.random.default_rng(config.seed)
    rows = [] if curve is None else curve
    order = rng.permutation(len(data))
    pos, window = 0, []
    for step in range(1, config.steps + 1):
        if pos + config.batch_size > len(order):
            order, pos = rng.permutation(len(data)), 0
        idx = np.sort(order[pos:pos + config.batch_size])
        pos += config.batch_size
        net.params.zero_grad()
        loss = pose_loss(net, data.images[idx], data.normal_images[idx], data.bins[idx],
                         training=True, rng=rng, dropout_prob=config.dropout_prob)
        loss.backward()
        nn.sgd_step(net.params, config)
        window.append(float(loss.data))
        if step % log_every == 0 or step == config.steps:
            rows.append((step, float(np.mean(window))))
            log.info("pose step %d loss %.4f", step, rows[-1][1])
            window = []
    return net


# -- style ---------------------------------------------------------------------------

@dataclass
class StyleHead:
    """Siamese embedding network sharing the pose network body."""

    net: PoseNet

    @classmethod
    def from_pose(cls, pose_net: PoseNet) -> "StyleHead":
        return cls(copy.deepcopy(pose_net))

    @property
    def params(self) -> ParameterSet:
        return self.net.params

    @property
    def dim(self) -> int:
        return self.net.embed_dim

    def embed(self, images, normal_images) -> np.ndarray:
        return self.net.embed(images, normal_images).data.astype(np.float64)


def style_embed(head: StyleHead, image, normal_image) -> np.ndarray:
    e = head.embed(image, normal_image)
    return e[0] if np.asarray(image).ndim == 3 else e


@dataclass
class StylePairSet:
    """Index pairs into a view table with similar (1) / dissimilar (0) labels."""

    query: np.ndarray
    other: np.ndarray
    label: np.ndarray

    def __post_init__(self):
        self.query = np.asarray(self.query, dtype=np.int64)
        self.other = np.asarray(self.other, dtype=np.int64)
        self.label = np.asarray(self.label, dtype=bool)
        if np.any((self.query == self.other) & ~self.label):
            raise ValueError("a view cannot be dissimilar to itself")

    def __len__(self) -> int:
        return len(self.label)


def siamese_loss(head: StyleHead, images, normal_images, pairs: StylePairSet, idx,
                 margin: float = 1.0, training=False, rng=None, dropout_prob=0.0) -> Tensor:
    """Summed contrastive loss of the selected pairs.

    The two branches run one after the other through the same parameters, so
    gradients from both accumulate into one set of weights.
    """
    q, o = pairs.query[idx], pairs.other[idx]
    fq = head.net.embed(images[q], normal_images[q], training, rng, dropout_prob)
    fo = head.net.embed(images[o], normal_images[o], training, rng, dropout_prob)
    return nn.contrastive_loss(fq, fo, pairs.label[idx], margin)


def train_style(head: StyleHead, images, normal_images, pairs: StylePairSet, config: TrainConfig,
                margin: float = 1.0, log_every: int = 50, curve: list | None = None) -> StyleHead:
    if not pairs.label.any() or pairs.label.all():
        raise ValueError("style training needs both similar and dissimilar pairs")
    rng = np.random.default_rng(config.seed)
    rows = [] if curve is None else curve
    window = []
    for step in range(1, config.steps + 1):
        idx = rng.choice(len(pairs), size=min(config.batch_size, len(pairs)), replace=False)
        head.params.zero_grad()
        loss = siamese_loss(head, images, normal_images, pairs, idx, margin,
                            training=True, rng=rng, dropout_prob=config.dropout_prob)
        loss.backward()
        nn.sgd_step(head.params, config)
        window.append(float(loss.data))
        if step % log_every == 0 or step == config.steps:
            rows.append((step, float(np.mean(window))))
            log.info("style step %d loss %.4f", step, rows[-1][1])
            window = []
    return head


def rerank_top_n(query_embedding: np.ndarray, candidates: list, n: int = 30,
                 embeddings: list[np.ndarray] | None = None) -> list:
    """Reorder the first ``n`` candidates by ascending embedding distance; keep the rest.

    Embeddings come from ``embeddings`` (aligned with ``candidates``) or from
    each candidate's ``embedding`` attribute.  The sort is stable.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    embs = embeddings if embeddings is not None else [c.embedding for c in candidates]
    q = np.asarray(query_embedding, dtype=np.float64)
    head = list(range(min(n, len(candidates))))
    dist = [float(np.linalg.norm(np.asarray(embs[i], dtype=np.float64) - q)) for i in head]
    head = sorted(head, key=lambda i: dist[i])
    return [candidates[i] for i in head] + list(candidates[len(head):])


def read_pair_labels(text: str) -> list[tuple[str, str, bool]]:
    """Parse ``query_id<TAB>candidate_id<TAB>{1|0}`` lines."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3 or parts[2] not in ("0", "1"):
            raise ValueError(f"line {lineno}: expected query<TAB>candidate<TAB>0|1")
        if parts[0] == parts[1] and parts[2] == "0":
            raise ValueError(f"line {lineno}: a view cannot be dissimilar to itself")
        out.append((parts[0], parts[1], parts[2] == "1"))
    return out


def write_pair_labels(rows) -> str:
    return "".join(f"{q}\t{c}\t{int(bool(l))}\n" for q, c, l in rows)

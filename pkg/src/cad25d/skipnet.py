"""Hypercolumn skip network for per-pixel surface normal regression."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from .nn import ParameterSet, Tensor, TrainConfig
from .render import NormalMap

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrunkSpec:
    """Conv blocks of ``(channels, layers)``; a 2x2 pool separates consecutive blocks."""

    blocks: tuple[tuple[int, int], ...] = ((16, 2), (32, 2), (64, 3))
    deep_channels: int = 128
    input_size: int = 64
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(tuple(b) for b in self.blocks))
        if self.input_size % (2 ** len(self.blocks)):
            raise ValueError("input size must be divisible by the pooling strides")

    def layer_names(self) -> list[str]:
        names = [f"{b + 1}_{l + 1}" for b, (_, n) in enumerate(self.blocks) for l in range(n)]
        return names + (["deep"] if self.deep_channels else [])

    def resolution(self, name: str) -> int:
        """Spatial size of a layer's output."""
        if name == "deep":
            return self.input_size >> (len(self.blocks) - 1)
        return self.input_size >> (int(name.split("_")[0]) - 1)

    def channels(self, name: str) -> int:
        if name == "deep":
            return self.deep_channels
        return self.blocks[int(name.split("_")[0]) - 1][0]

    def pooled_dim(self) -> int:
        """Length of the flattened, pooled output of the last block."""
        side = self.input_size >> len(self.blocks)
        return self.blocks[-1][0] * side * side


DEFAULT_TAPS = ("1_2", "2_2", "3_3", "deep")


@dataclass(frozen=True)
class HypercolumnSpec:
    taps: tuple[str, ...] = DEFAULT_TAPS

    def __post_init__(self):
        object.__setattr__(self, "taps", tuple(self.taps))
        if not self.taps:
            raise ValueError("hypercolumn needs at least one tap")
        if len(set(self.taps)) != len(self.taps):
            raise ValueError("duplicate hypercolumn taps")

    def validate(self, trunk: TrunkSpec) -> None:
        names = trunk.layer_names()
        for t in self.taps:
            if t not in names:
                raise KeyError(f"unknown tap layer {t!r}")

    def dim(self, trunk: TrunkSpec) -> int:
        return sum(trunk.channels(t) for t in self.taps)


def he_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def normalize_image(images: np.ndarray) -> np.ndarray:
    """[N,H,W,3] (or [H,W,3]) values in [0,255] -> [N,3,H,W] centred float32."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    return np.ascontiguousarray(((images - 127.5) / 127.5).transpose(0, 3, 1, 2))


class Trunk:
    """Stack of 3x3 same-padded conv+ReLU layers with optional 1x1 deep layer."""

    def __init__(self, spec: TrunkSpec, rng: np.random.Generator, upto: str | None = None,
                 with_deep: bool = True):
        self.spec = spec
        names = spec.layer_names()
        if not with_deep and "deep" in names:
            names.remove("deep")
        if upto is not None:
            names = names[: names.index(upto) + 1]
        self.names = names
        self.params = ParameterSet()
        c_in = spec.in_channels
        for name in names:
            if name == "deep":
                c_prev = spec.blocks[-1][0]
                k = spec.deep_channels
                self.params.add(f"{name}.w", Tensor(he_init(rng, (k, c_prev, 1, 1), c_prev)))
                self.params.add(f"{name}.b", Tensor(np.zeros(k, np.float32)))
                continue
            k = spec.channels(name)
            self.params.add(f"{name}.w", Tensor(he_init(rng, (k, c_in, 3, 3), 9 * c_in)))
            self.params.add(f"{name}.b", Tensor(np.zeros(k, np.float32)))
            c_in = k

    def forward(self, x: Tensor, pool_last: bool = False) -> dict[str, Tensor]:
        """Activations of every built layer (plus ``"pool"`` for the pooled last block)."""
        acts: dict[str, Tensor] = {}
        block = 1
        for name in self.names:
            if name == "deep":
                x = nn.relu(nn.conv2d(x, self.params["deep.w"], self.params["deep.b"], pad=0))
                acts[name] = x
                continue
            b = int(name.split("_")[0])
            if b != block:
                x = nn.maxpool2(x)
                block = b
            x = nn.relu(nn.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"]))
            acts[name] = x
        if pool_last:
            last = [n for n in self.names if n != "deep"][-1]
            acts["pool"] = nn.maxpool2(acts[last])
        return acts


@dataclass
class SkipNet:
    trunk_spec: TrunkSpec = field(default_factory=TrunkSpec)
    hypercolumn: HypercolumnSpec = field(default_factory=HypercolumnSpec)
    head_widths: tuple[int, int] = (128, 64)
    seed: int = 0

    def __post_init__(self):
        self.hypercolumn.validate(self.trunk_spec)
        rng = np.random.default_rng(self.seed)
        names = self.trunk_spec.layer_names()
        deepest = max(self.hypercolumn.taps, key=names.index)
        self.trunk = Trunk(self.trunk_spec, rng, upto=deepest)
        self.params = ParameterSet()
        self.params.update(self.trunk.params)
        dims = [self.hypercolumn.dim(self.trunk_spec), *self.head_widths, 3]
        for i in range(3):
            self.params.add(f"fc{i + 1}.w", Tensor(he_init(rng, (dims[i + 1], dims[i]), dims[i])))
            self.params.add(f"fc{i + 1}.b", Tensor(np.zeros(dims[i + 1], np.float32)))

    # -- forward ----------------------------------------------------------------
    def features(self, images: np.ndarray) -> dict[str, Tensor]:
        x = Tensor(normalize_image(images))
        if x.shape[-1] != self.trunk_spec.input_size or x.shape[-2] != self.trunk_spec.input_size:
            raise nn.DimensionError(f"image size {x.shape[-2:]} does not match trunk input "
                                    f"{self.trunk_spec.input_size}")
        return self.trunk.forward(x)

    def hypercolumns(self, acts: dict[str, Tensor], batch_idx, ys, xs) -> Tensor:
        return extract_hypercolumn(acts, self.hypercolumn, batch_idx, ys, xs, self.trunk_spec.input_size)

    def head(self, h: Tensor, training: bool = False, rng: np.random.Generator | None = None,
             dropout_prob: float = 0.0) -> Tensor:
        p = self.params
        x = nn.fully_connected(h, p["fc1.w"], p["fc1.b"], apply_relu=True)
        x = nn.dropout(x, dropout_prob, training, rng)
        x = nn.fully_connected(x, p["fc2.w"], p["fc2.b"], apply_relu=True)
        x = nn.dropout(x, dropout_prob, training, rng)
        # last layer is linear: normals need negative components
        x = nn.fully_connected(x, p["fc3.w"], p["fc3.b"], apply_relu=False)
        return nn.l2_normalize(x, axis=-1)

    def predict_pixels(self, images, batch_idx, ys, xs, training=False, rng=None,
                       dropout_prob: float = 0.0) -> Tensor:
        acts = self.features(images)
        return self.head(self.hypercolumns(acts, batch_idx, ys, xs), training, rng, dropout_prob)

    def state(self) -> dict[str, np.ndarray]:
        return self.params.state()

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.params.load_state(state)


def extract_hypercolumn(acts: dict[str, Tensor], spec: HypercolumnSpec, batch_idx, ys, xs,
                        input_size: int) -> Tensor:
    """Concatenate bilinearly interpolated tap responses at pixel locations.

    Pixel ``(y, x)`` of the input maps to ``(y * s / input_size, x * s / input_size)``
    on a tap of side ``s``, so pixels on the tap's grid read exact values.
    """
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    cols = []
    for tap in spec.taps:
        if tap not in acts:
            raise KeyError(f"unknown tap layer {tap!r}")
        fmap = acts[tap]
        side = fmap.shape[-1]
        scale = side / input_size
        cols.append(nn.gather_bilinear(fmap, batch_idx, ys * scale, xs * scale))
    return nn.concat(cols, axis=1)


# -- data handling ----------------------------------------------------------------

def sample_training_pixels(masks: Sequence[np.ndarray], pixels_per_image: int = 1000,
                           rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniformly sample valid pixels without replacement, ``pixels_per_image`` per image.

    Returns ``(image_index, y, x)`` arrays.
    """
    rng = rng or np.random.default_rng(0)
    bi, ys, xs = [], [], []
    for i, m in enumerate(masks):
        flat = np.flatnonzero(np.asarray(m, dtype=bool))
        if flat.size == 0:
            raise ValueError(f"image {i} has no valid pixel")
        if flat.size > pixels_per_image:
            flat = np.sort(rng.choice(flat, size=pixels_per_image, replace=False))
        y, x = np.divmod(flat, np.asarray(m).shape[1])
        bi.append(np.full(flat.size, i))
        ys.append(y)
        xs.append(x)
    return np.concatenate(bi), np.concatenate(ys), np.concatenate(xs)


def flip_pair(image: np.ndarray, normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal mirror of an image and its normal map (x-component negated)."""
    img = image[:, ::-1].copy()
    n = normals[:, ::-1].copy()
    n[..., 0] = -n[..., 0]
    return img, n


def augment(image: np.ndarray, normals: np.ndarray, rng: np.random.Generator,
            flip_prob: float = 0.5, color_range: tuple[float, float] = (0.8, 1.2)):
    """Random left-right flip plus independent per-channel color scaling."""
    if rng.random() < flip_prob:
        image, normals = flip_pair(image, normals)
    scale = rng.uniform(*color_range, size=3)
    image = np.clip(np.asarray(image, dtype=np.float32) * scale.astype(np.float32), 0, 255)
    return image, normals


@dataclass
class PixelBatch:
    images: np.ndarray          # [N, H, W, 3]
    normals: np.ndarray         # [N, H, W, 3], NaN where invalid
    batch_idx: np.ndarray
    ys: np.ndarray
    xs: np.ndarray

    def targets(self) -> np.ndarray:
        return self.normals[self.batch_idx, self.ys, self.xs]


def make_batch(images, normals, config: TrainConfig, rng: np.random.Generator,
               augment_data: bool = True) -> PixelBatch:
    n = len(images)
    pick = np.sort(rng.choice(n, size=min(config.batch_images, n), replace=False))
    imgs, nrms = [], []
    for i in pick:
        im, nm = np.asarray(images[i], dtype=np.float32), np.asarray(normals[i], dtype=np.float64)
        if augment_data:
            im, nm = augment(im, nm, rng)
        imgs.append(im)
        nrms.append(nm)
    masks = [np.all(np.isfinite(nm), axis=-1) for nm in nrms]
    bi, ys, xs = sample_training_pixels(masks, config.pixels_per_image, rng)
    return PixelBatch(np.stack(imgs), np.stack(nrms), bi, ys, xs)


def train_step(net: SkipNet, batch: PixelBatch, config: TrainConfig,
               rng: np.random.Generator | None = None) -> float:
    """Forward on the sampled pixels, backprop through head and trunk, one SGD update."""
    if len(batch.ys) == 0:
        raise nn.EmptyBatchError("empty pixel batch")
    net.params.zero_grad()
    pred = net.predict_pixels(batch.images, batch.batch_idx, batch.ys, batch.xs,
                              training=True, rng=rng, dropout_prob=config.dropout_prob)
    loss = nn.normal_regression_loss(pred, batch.targets())
    loss.backward()
    nn.sgd_step(net.params, config)
    return float(loss.data)


def predict_normal_map(net: SkipNet, image: np.ndarray) -> NormalMap:
    """Dense prediction: the head is applied at every pixel; all pixels are valid."""
    image = np.asarray(image)
    H, W = image.shape[:2]
    if H != net.trunk_spec.input_size or W != net.trunk_spec.input_size:
        raise nn.DimensionError(f"image {H}x{W} does not match trunk input {net.trunk_spec.input_size}")
    acts = net.features(image)
    ys, xs = np.divmod(np.arange(H * W), W)
    out = net.head(net.hypercolumns(acts, np.zeros(H * W, dtype=np.int64), ys, xs))
    n = out.data.astype(np.float64).reshape(H, W, 3)
    norm = np.linalg.norm(n, axis=-1)
    # a degenerate (all-zero) head output gets the camera-facing normal
    n[norm == 0] = (0.0, 0.0, -1.0)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return NormalMap(n, np.ones((H, W), dtype=bool))


def train_skipnet(net: SkipNet, images, normals, config: TrainConfig,
                  log_every: int = 50, curve: list | None = None,
                  eval_fn: Callable[[SkipNet], float] | None = None,
                  augment_data: bool = True) -> list[tuple[int, float, float]]:
    """Run ``config.steps`` pixel-sampled SGD steps; returns (step, loss, mean error) rows."""
    rng = np.random.default_rng(config.seed)
    rows = [] if curve is None else curve
    window = []
    for step in range(1, config.steps + 1):
        batch = make_batch(images, normals, config, rng, augment_data)
        loss = train_step(net, batch, config, rng)
        window.append(loss)
        if step % log_every == 0 or step == config.steps:
            err = eval_fn(net) if eval_fn is not None else float("nan")
            rows.append((step, float(np.mean(window)), err))
            log.info("step %d loss %.4f err %.2f", step, rows[-1][1], err)
            window = []
    return rows


def mean_angular_error(net: SkipNet, images, normals) -> float:
    from .evaluation import angular_error
    errs = [angular_error(predict_normal_map(net, im), NormalMap.from_array(nm)) for im, nm in zip(images, normals)]
    return float(np.concatenate(errs).mean())

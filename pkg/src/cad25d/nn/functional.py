"""Differentiable layers and losses used by the three networks."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import sparse

from .tensor import DimensionError, Tensor


class ParameterError(ValueError):
    """A layer hyperparameter is out of range."""


class EmptyBatchError(ValueError):
    """A loss was asked to average over zero elements."""


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = x.data > 0
    return Tensor._make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def linear(x: Tensor, A: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ A.T + b`` for a batch of row vectors (or a single vector)."""
    single = x.ndim == 1
    xd = x.data[None, :] if single else x.data
    if A.ndim != 2 or xd.ndim != 2 or xd.shape[1] != A.shape[1]:
        raise DimensionError(f"fully connected: input {x.shape} vs weights {A.shape}")
    if b is not None and b.shape != (A.shape[0],):
        raise DimensionError(f"fully connected: bias {b.shape} vs weights {A.shape}")
    out = xd @ A.data.T
    if b is not None:
        out = out + b.data
    Ad = A.data

    def back(g):
        g2 = g[None, :] if single else g
        gx = g2 @ Ad
        gA = g2.T @ xd
        grads = [gx[0] if single else gx, gA]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, A) if b is None else (x, A, b)
    return Tensor._make(out[0] if single else out, parents, back)


def fully_connected(x: Tensor, A: Tensor, b: Tensor, apply_relu: bool = True) -> Tensor:
    y = linear(x, A, b)
    return relu(y) if apply_relu else y


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int | None = None) -> Tensor:
    """Cross-correlation of ``x`` ([C,H,W] or [N,C,H,W]) with ``kernels`` [K,C,kh,kw].

    ``pad=None`` selects "same" padding, ``(k-1)//2``.
    """
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    K, C, kh, kw = kernels.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ParameterError("kernel sizes must be odd")
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or xd.shape[1] != C:
        raise DimensionError(f"conv2d: input {x.shape} vs kernels {kernels.shape}")
    if pad is None:
        pad = (kh - 1) // 2
    if pad < 0:
        raise ParameterError("pad must be >= 0")
    N, _, H, W = xd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise DimensionError("conv2d: kernel larger than padded input")
    # [N, C, Ho, Wo, kh, kw] view -> [N*Ho*Wo, C*kh*kw] columns
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * kh * kw)
    wmat = kernels.data.reshape(K, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(N, Ho, Wo, K).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def back(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(N * Ho * Wo, K)
        gw = (gmat.T @ cols).reshape(kernels.shape)
        gx = None
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(N, Ho, Wo, C, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
            gx = gx[0] if single else gx
        grads = [gx, gw]
        if bias is not None:
            grads.append(gmat.sum(axis=0))
        return tuple(grads)

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor._make(out[0] if single else out, parents, back)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 over the last two axes.

    Gradient goes to the window maximum; ties resolve to the first element in
    row-major order.
    """
    H, W = x.shape[-2:]
    if H % 2 or W % 2:
        raise DimensionError(f"maxpool2 needs even spatial size, got {H}x{W}")
    lead = x.shape[:-2]
    blocks = x.data.reshape(*lead, H // 2, 2, W // 2, 2)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, H // 2, W // 2, 4)
    arg = blocks.argmax(axis=-1)  # argmax returns the first maximum
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(*lead, H // 2, W // 2, 2, 2)
        gb = np.moveaxis(gb, -2, -3).reshape(*lead, H, W)
        return (gb,)

    return Tensor._make(out, (x,), back)


def l2_normalize(v: Tensor, axis: int = -1, eps: float = 1e-6) -> Tensor:
    """Divide each slice along ``axis`` by ``max(norm, eps)``."""
    d = v.data
    norm = np.sqrt((d * d).sum(axis=axis, keepdims=True))
    clamped = norm <= eps
    denom = np.where(clamped, eps, norm).astype(d.dtype)
    y = d / denom

    def back(g):
        # inside the clamp the map is linear; outside it is the projection
        proj = g - y * (g * y).sum(axis=axis, keepdims=True)
        return (np.where(clamped, g, proj) / denom,)

    return Tensor._make(y, (v,), back)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    mask = (keep / (1.0 - p)).astype(x.dtype)
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,))


def gather_bilinear(fmap: Tensor, batch_idx: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> Tensor:
    """Bilinearly sample ``fmap`` [N,C,h,w] at continuous (y, x) locations.

    Returns [P, C] for P sample points.  Coordinates are clamped to the map.
    """
    N, C, h, w = fmap.shape
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0, h - 1)
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0, w - 1)
    b = np.asarray(batch_idx, dtype=np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy, fx = ys - y0, xs - x0
    rows = np.repeat(np.arange(len(ys)), 4)
    cols = np.stack([(b * h + y0) * w + x0, (b * h + y0) * w + x1,
                     (b * h + y1) * w + x0, (b * h + y1) * w + x1], axis=1).reshape(-1)
    vals = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx,
                     fy * (1 - fx), fy * fx], axis=1).reshape(-1)
    S = sparse.csr_matrix((vals.astype(fmap.dtype), (rows, cols)), shape=(len(ys), N * h * w))
    flat = fmap.data.transpose(0, 2, 3, 1).reshape(N * h * w, C)
    out = np.asarray(S @ flat)

    def back(g):
        gflat = np.asarray(S.T @ g)
        return (np.ascontiguousarray(gflat.reshape(N, h, w, C).transpose(0, 3, 1, 2)),)

    return Tensor._make(out, (fmap,), back)


# -- losses -------------------------------------------------------------------

def normal_regression_loss(pred: Tensor, gt: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean over valid rows of ``||pred - gt||^2`` (pred, gt are [P, 3])."""
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    valid = np.all(np.isfinite(gt), axis=-1)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    n = int(valid.sum())
    if n == 0:
        raise EmptyBatchError("normal regression loss over zero valid pixels")
    target = np.where(valid[:, None], gt, 0).astype(pred.dtype)
    w = (valid[:, None] / n).astype(pred.dtype)
    diff = pred.data - target
    loss = np.asarray((diff * diff * w).sum(), dtype=pred.dtype)
    return Tensor._make(loss, (pred,), lambda g: (2.0 * g * diff * w,))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_loss(logits: Tensor, target, clamp: float = 1e-12) -> Tensor:
    """Mean ``-log p[target]`` over a batch of logits ([B, K] or [K])."""
    single = logits.ndim == 1
    z = logits.data[None] if single else logits.data
    t = np.atleast_1d(np.asarray(target))
    if t.shape[0] != z.shape[0]:
        raise DimensionError("one target per row of logits required")
    K = z.shape[1]
    if not np.issubdtype(t.dtype, np.integer) or np.any((t < 0) | (t >= K)):
        raise IndexError(f"target bin out of range [0, {K})")
    with np.errstate(invalid="ignore", over="ignore"):
        p = softmax(z.astype(np.float64))
    rows = np.arange(len(t))
    pt = p[rows, t]
    loss = -np.log(np.maximum(pt, clamp)).mean()
    onehot = np.zeros_like(p)
    onehot[rows, t] = 1.0
    # below the clamp the loss is flat in the target probability
    gz = p - onehot
    gz[pt < clamp] = 0.0
    gz /= len(t)

    def back(g):
        out = (g * gz).astype(logits.dtype)
        return (out[0] if single else out,)

    return Tensor._make(np.asarray(loss, dtype=logits.dtype), (logits,), back)


def euclidean_distance(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise ``||a - b||_2``; gradient at zero distance is taken as zero."""
    if a.shape != b.shape:
        raise DimensionError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    dist = np.sqrt((diff * diff).sum(axis=-1))
    safe = np.where(dist > 0, dist, 1.0)
    unit = np.where((dist > 0)[..., None], diff / safe[..., None], 0).astype(a.dtype)

    def back(g):
        ga = np.asarray(g)[..., None] * unit
        return (ga, -ga)

    return Tensor._make(dist.astype(a.dtype), (a, b), back)


def contrastive_loss(f_q: Tensor, f_other: Tensor, is_positive, margin: float = 1.0) -> Tensor:
    """Sum of unsquared contrastive terms over a batch of pairs.

    Positive pairs contribute ``||f_q - f_p||``; negative pairs
    ``max(margin - ||f_q - f_n||, 0)``.
    """
    dist = euclidean_distance(f_q, f_other)
    pos = np.asarray(is_positive, dtype=bool)
    if pos.shape != dist.shape:
        pos = np.broadcast_to(pos, dist.shape)
    d = dist.data
    hinge = margin - d
    active = hinge > 0
    val = np.where(pos, d, np.where(active, hinge, 0.0)).sum()
    coeff = np.where(pos, 1.0, np.where(active, -1.0, 0.0)).astype(dist.dtype)
    return Tensor._make(np.asarray(val, dtype=dist.dtype), (dist,), lambda g: (g * coeff,))

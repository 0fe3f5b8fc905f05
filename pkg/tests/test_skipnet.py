import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cad25d import nn
from cad25d.nn import Tensor, TrainConfig
from cad25d.skipnet import (HypercolumnSpec, PixelBatch, SkipNet, TrunkSpec, augment, extract_hypercolumn, flip_pair,
                            make_batch, predict_normal_map, sample_training_pixels, train_skipnet, train_step)

TINY = TrunkSpec(blocks=((4, 1), (6, 1)), deep_channels=5, input_size=8)
TINY_TAPS = HypercolumnSpec(("1_1", "2_1", "deep"))


def tiny_net(seed=0, widths=(8, 6)):
    return SkipNet(TINY, TINY_TAPS, widths, seed=seed)


def as_float64(net):
    for _, t in net.params.items():
        t.data = t.data.astype(np.float64)
    return net


def test_trunk_spec_names_and_sizes():
    s = TrunkSpec()
    assert s.layer_names() == ["1_1", "1_2", "2_1", "2_2", "3_1", "3_2", "3_3", "deep"]
    assert (s.resolution("1_2"), s.resolution("2_2"), s.resolution("3_3"), s.resolution("deep")) == (64, 32, 16, 16)
    assert HypercolumnSpec().dim(s) == 16 + 32 + 64 + 128
    with pytest.raises(ValueError):
        TrunkSpec(input_size=66)


def test_hypercolumn_spec_validation():
    with pytest.raises(ValueError):
        HypercolumnSpec(())
    with pytest.raises(ValueError):
        HypercolumnSpec(("1_1", "1_1"))
    with pytest.raises(KeyError):
        SkipNet(TINY, HypercolumnSpec(("9_9",)))


def _acts(rng):
    return {"1_1": Tensor(rng.normal(size=(2, 3, 8, 8))), "2_1": Tensor(rng.normal(size=(2, 4, 4, 4)))}


def test_hypercolumn_exact_on_grid():
    rng = np.random.default_rng(0)
    acts = _acts(rng)
    b, ys, xs = np.array([0, 1, 1]), np.array([0, 2, 6]), np.array([4, 4, 2])
    h = extract_hypercolumn(acts, HypercolumnSpec(("1_1", "2_1")), b, ys, xs, 8).data
    assert h.shape == (3, 3 + 4)
    for i in range(3):
        np.testing.assert_array_equal(h[i, :3], acts["1_1"].data[b[i], :, ys[i], xs[i]])
        np.testing.assert_array_equal(h[i, 3:], acts["2_1"].data[b[i], :, ys[i] // 2, xs[i] // 2])


def test_hypercolumn_interpolates_between_coarse_cells():
    rng = np.random.default_rng(1)
    acts = _acts(rng)
    h = extract_hypercolumn(acts, HypercolumnSpec(("2_1",)), [0], [2], [3], 8).data[0]
    c = acts["2_1"].data[0]
    np.testing.assert_allclose(h, 0.5 * (c[:, 1, 1] + c[:, 1, 2]), atol=1e-12)
    with pytest.raises(KeyError):
        extract_hypercolumn(acts, HypercolumnSpec(("deep",)), [0], [0], [0], 8)


def test_hypercolumn_gradient_reaches_feature_map():
    rng = np.random.default_rng(2)
    acts = {k: Tensor(v.data, requires_grad=True) for k, v in _acts(rng).items()}
    w = Tensor(rng.normal(size=(4, 7)))
    fn = lambda: (extract_hypercolumn(acts, HypercolumnSpec(("1_1", "2_1")), [0, 1, 0, 1],
                                      [0.0, 3.0, 5.0, 7.0], [1.0, 2.0, 6.0, 3.0], 8) * w).sum()
    assert nn.gradient_check(fn, acts).passed


def test_sample_training_pixels_examples():
    rng = np.random.default_rng(0)
    masks = [np.ones((64, 64), bool)] * 5
    b, _, _ = sample_training_pixels(masks, 1000, rng)
    assert len(b) == 5000 and all(np.sum(b == i) == 1000 for i in range(5))
    small = np.zeros((8, 8), bool)
    small.flat[[3, 9, 17, 20, 33, 40, 41, 50, 60, 63]] = True
    _, ys, xs = sample_training_pixels([small], 1000, rng)
    assert sorted(ys * 8 + xs) == [3, 9, 17, 20, 33, 40, 41, 50, 60, 63]
    with pytest.raises(ValueError):
        sample_training_pixels([np.zeros((4, 4), bool)])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 40))
def test_sampling_valid_unique_deterministic(seed, k):
    m = np.random.default_rng(seed).random((2, 10, 10)) < 0.4
    m[:, 0, 0] = True
    a = sample_training_pixels(list(m), k, np.random.default_rng(seed))
    again = sample_training_pixels(list(m), k, np.random.default_rng(seed))
    for x, y in zip(a, again):
        np.testing.assert_array_equal(x, y)
    b, ys, xs = a
    assert np.all(m[b, ys, xs])
    assert len(set(zip(b, ys, xs))) == len(b)
    for i in range(2):
        assert np.sum(b == i) == min(k, m[i].sum())


def test_flip_examples():
    img = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3)
    n = np.zeros((2, 3, 3))
    n[..., 2] = -1
    n[0, 0] = [1, 0, 0]
    fi, fn = flip_pair(img, n)
    np.testing.assert_array_equal(fn[0, 2], [-1, 0, 0])
    np.testing.assert_array_equal(fn[1, 1], [0, 0, -1])
    bi, bn = flip_pair(fi, fn)
    np.testing.assert_array_equal(bi, img)
    np.testing.assert_array_equal(bn, n)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_augment_properties(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((4, 5, 3)) * 200
    n = rng.normal(size=(4, 5, 3))
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    ai, an = augment(img, n, np.random.default_rng(seed))
    np.testing.assert_allclose(np.linalg.norm(an, axis=-1), 1.0, atol=1e-12)
    flipped = not np.array_equal(an, n)
    if flipped:
        _, expect = flip_pair(img, n)
        np.testing.assert_array_equal(an, expect)
        img = img[:, ::-1]
    ratio = ai / np.maximum(img, 1e-9)
    big = img > 1
    for c in range(3):
        r = ratio[..., c][big[..., c]]
        assert np.ptp(r) < 1e-4 and 0.8 - 1e-6 <= r[0] <= 1.2 + 1e-6


def test_predict_normal_map_shape_and_unit():
    net = tiny_net()
    img = np.random.default_rng(0).random((8, 8, 3)) * 255
    nm = predict_normal_map(net, img)
    assert nm.normals.shape == (8, 8, 3) and nm.mask.all()
    np.testing.assert_allclose(np.linalg.norm(nm.normals, axis=-1), 1.0, atol=1e-4)
    with pytest.raises(nn.DimensionError):
        predict_normal_map(net, np.zeros((16, 16, 3)))


def _toy_set(n=2, size=8, seed=0):
    rng = np.random.default_rng(seed)
    images, normals = [], []
    for _ in range(n):
        img = np.zeros((size, size, 3), np.float32)
        nm = np.zeros((size, size, 3))
        split = rng.integers(2, size - 2)
        img[:, :split] = (200, 60, 60)
        img[:, split:] = (40, 160, 220)
        nm[:, :split] = (0, 0, -1)
        nm[:, split:] = np.array([0.7, -0.3, -0.6]) / np.linalg.norm([0.7, -0.3, -0.6])
        images.append(img)
        normals.append(nm)
    return images, normals


def test_full_network_gradcheck_8_pixels():
    net = as_float64(tiny_net(seed=3))
    images, normals = _toy_set()
    b = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    ys, xs = np.array([0, 2, 5, 7, 1, 3, 4, 6]), np.array([1, 6, 3, 0, 7, 2, 5, 4])
    gt = np.stack(normals)[b, ys, xs]
    fn = lambda: nn.normal_regression_loss(net.predict_pixels(np.stack(images), b, ys, xs), gt)
    params = {k: t for k, t in net.params.items()}
    rep = nn.gradient_check(fn, params, tolerance=1e-3, h=1e-5, max_entries=12)
    assert rep.passed, str(rep)
    assert set(rep.errors) >= {"1_1.w", "2_1.w", "deep.w", "fc1.w", "fc3.b"}


def test_zero_learning_rate_keeps_parameters():
    net = tiny_net()
    before = net.state()
    images, normals = _toy_set()
    cfg = TrainConfig(learning_rate=0.0, batch_images=2, pixels_per_image=16, steps=3)
    train_skipnet(net, images, normals, cfg)
    for k, v in net.state().items():
        np.testing.assert_array_equal(v, before[k])


def test_empty_batch_rejected():
    net = tiny_net()
    empty = PixelBatch(np.zeros((1, 8, 8, 3)), np.zeros((1, 8, 8, 3)), np.zeros(0, int), np.zeros(0, int),
                       np.zeros(0, int))
    with pytest.raises(nn.EmptyBatchError):
        train_step(net, empty, TrainConfig())


def test_make_batch_targets_valid():
    images, normals = _toy_set(3)
    normals[1][:4] = np.nan
    batch = make_batch(images, normals, TrainConfig(batch_images=3, pixels_per_image=20), np.random.default_rng(0))
    assert np.all(np.isfinite(batch.targets()))


def test_loss_decreases_on_two_image_toy_set():
    net = SkipNet(TrunkSpec(blocks=((8, 1), (8, 1)), deep_channels=8, input_size=16),
                  HypercolumnSpec(("1_1", "2_1", "deep")), (32, 16), seed=0)
    images, normals = _toy_set(2, 16)
    cfg = TrainConfig(learning_rate=0.01, dropout_prob=0.0, batch_images=2, pixels_per_image=100, steps=200)
    rows = train_skipnet(net, images, normals, cfg, log_every=50, augment_data=False)
    losses = [r[1] for r in rows]
    assert len(losses) == 4
    assert all(a > b for a, b in zip(losses, losses[1:])), losses

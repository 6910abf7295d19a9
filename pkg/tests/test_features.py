"""Contrastive feature field: analytic loss values, gradients, optimizer.

Loss oracles are closed forms evaluated with math.* calls inside the test,
independent of the library's logsumexp path: with s = exp(f_a.f_n / tau)
identical everywhere the per-triplet loss is log(1 + m); with an aligned
positive and m orthogonal negatives it is log1p(m exp(-1/tau)).
"""

import json
import math

import numpy as np
import pytest
from conftest import fd_gradient, random_triplet_instance, synthetic_triplets

from hullfield.config import RunConfig
from hullfield.features import (FeatureSet, ambient_gradient,
                                contrastive_loss, export_features,
                                init_features, load_features, loss_gradient,
                                optimize_features, pca_colors, plain_loss,
                                spatial_neighbors)

TAU = 0.1


def test_identical_features_log_m_plus_one():
    k = 8
    e0 = np.zeros(k)
    e0[0] = 1.0
    feats = np.tile(e0, (3, 1))
    for m in (1, 4):
        ts = synthetic_triplets([0], [1], [[2] * m], 3)
        got = contrastive_loss(feats, ts, TAU)
        assert abs(got - math.log(1 + m)) < 1e-12


def test_aligned_pair_orthogonal_negatives():
    k = 4
    feats = np.zeros((3, k))
    feats[0, 0] = 1.0   # anchor
    feats[1, 0] = 1.0   # positive, aligned
    feats[2, 1] = 1.0   # negative, orthogonal
    for m in (1, 512):
        ts = synthetic_triplets([0], [1], [[2] * m], 3)
        want = math.log1p(m * math.exp(-1.0 / TAU))
        assert abs(contrastive_loss(feats, ts, TAU) - want) < 1e-12


def test_anti_aligned_negative_near_zero_loss():
    feats = np.zeros((3, 4))
    feats[0, 0] = 1.0
    feats[1, 0] = 1.0
    feats[2, 0] = -1.0
    ts = synthetic_triplets([0], [1], [[2]], 3)
    want = math.log1p(math.exp(-2.0 / TAU))
    got = contrastive_loss(feats, ts, TAU)
    assert abs(got - want) < 1e-15
    assert got > 0.0   # nonnegative by construction


def test_symmetric_in_anchor_positive():
    rng = np.random.default_rng(8)
    feats, _ = random_triplet_instance(rng)
    n = len(feats)
    ts_fwd = synthetic_triplets([0], [1], [[2, 3 % n]], n)
    ts_bwd = synthetic_triplets([1], [0], [[2, 3 % n]], n)
    assert abs(contrastive_loss(feats, ts_fwd, TAU)
               - contrastive_loss(feats, ts_bwd, TAU)) < 1e-12


def test_plain_loss_analytic():
    feats = np.zeros((4, 4))
    feats[0, 0] = 1.0
    feats[1, 0] = 1.0
    feats[2, 1] = 1.0
    feats[3, 0] = -1.0
    # aligned positive, one orthogonal negative: 0.5 * (-1 + 0)
    ts = synthetic_triplets([0], [1], [[2]], 4)
    assert abs(plain_loss(feats, ts) - (-0.5)) < 1e-15
    # mean over mixed negatives: 0.5 * (-1 + (0 - 1) / 2)
    ts2 = synthetic_triplets([0], [1], [[2, 3]], 4)
    assert abs(plain_loss(feats, ts2) - 0.5 * (-1.0 - 0.5)) < 1e-15


def test_negative_permutation_invariance():
    rng = np.random.default_rng(3)
    feats = init_features(6, 8, rng)
    ts_a = synthetic_triplets([0], [1], [[2, 3, 4, 5]], 6)
    ts_b = synthetic_triplets([0], [1], [[5, 3, 2, 4]], 6)
    assert abs(contrastive_loss(feats, ts_a, TAU)
               - contrastive_loss(feats, ts_b, TAU)) < 1e-12


def test_global_rotation_invariance():
    rng = np.random.default_rng(12)
    feats, ts = random_triplet_instance(rng)
    q, _ = np.linalg.qr(rng.standard_normal((feats.shape[1],) * 2))
    before = contrastive_loss(feats, ts, TAU)
    after = contrastive_loss(feats @ q, ts, TAU)
    assert abs(before - after) < 1e-10


@pytest.mark.parametrize("mode", ["contrastive", "plain"])
def test_gradient_matches_finite_differences(mode):
    rng = np.random.default_rng(42)
    for _ in range(3):
        feats, ts = random_triplet_instance(rng)
        batch = np.arange(len(ts))
        _, grad = ambient_gradient(feats, ts, batch, TAU, mode=mode)
        fd = fd_gradient(feats, ts, TAU, mode)
        scale = max(np.abs(grad).max(), 1e-12)
        assert np.abs(fd - grad).max() / scale < 1e-5


def test_tangent_projection_orthogonal():
    rng = np.random.default_rng(1)
    feats, ts = random_triplet_instance(rng)
    grad, report = loss_gradient(feats, ts, np.arange(len(ts)), TAU)
    dots = (grad * feats).sum(axis=1)
    assert np.abs(dots).max() < 1e-12
    assert abs(report.total - report.per_triplet.mean()) < 1e-12
    assert report.grad_norm >= 0.0


def test_init_features_unit():
    f = init_features(100, 16, np.random.default_rng(0))
    assert f.shape == (100, 16)
    assert np.allclose(np.linalg.norm(f, axis=1), 1.0)


def _toy_cfg(**kw):
    base = dict(k=8, steps=150, batch_size=32, learning_rate=0.1,
                smooth_weight=0.0, seed=0)
    base.update(kw)
    return RunConfig(**base)


def _toy_separable():
    # two spatial clusters; triplets pull within and push across
    rng = np.random.default_rng(0)
    anchors, positives, negs = [], [], []
    for _ in range(60):
        a = int(rng.integers(0, 8))
        same = (a + int(rng.integers(1, 8))) % 8
        other = int(rng.integers(8, 16))
        anchors.append(a)
        positives.append(same)
        negs.append([other, int(rng.integers(8, 16))])
        anchors.append(other)
        positives.append(8 + (other - 8 + int(rng.integers(1, 8))) % 8)
        negs.append([a])
    return synthetic_triplets(anchors, positives, negs, 16)


def test_optimizer_reduces_loss_and_stays_unit():
    ts = _toy_separable()
    cfg = _toy_cfg()
    start = contrastive_loss(init_features(16, cfg.k,
                                           np.random.default_rng(99)),
                             ts, cfg.tau)
    fs = optimize_features(ts, cfg)
    assert np.allclose(np.linalg.norm(fs.features, axis=1), 1.0)
    assert fs.fit.final_loss < start
    assert len(fs.fit.trace) == cfg.steps
    # the two groups end up separated in feature space
    sim = fs.features[:8] @ fs.features[8:].T
    within = fs.features[:8] @ fs.features[:8].T
    assert within.mean() > sim.mean()


def test_optimizer_deterministic():
    ts = _toy_separable()
    a = optimize_features(ts, _toy_cfg())
    b = optimize_features(ts, _toy_cfg())
    assert np.array_equal(a.features, b.features)
    c = optimize_features(ts, _toy_cfg(seed=1))
    assert not np.array_equal(a.features, c.features)


def test_plain_mode_runs():
    ts = _toy_separable()
    fs = optimize_features(ts, _toy_cfg(loss_mode="plain"))
    assert fs.fit.mode == "plain"
    assert np.isfinite(fs.fit.final_loss)
    assert np.allclose(np.linalg.norm(fs.features, axis=1), 1.0)


def test_pca_colors_range():
    rng = np.random.default_rng(6)
    f = init_features(200, 12, rng)
    c = pca_colors(f)
    assert c.shape == (200, 3)
    assert c.min() >= 0.0 and c.max() <= 1.0
    assert np.array_equal(c, pca_colors(f))
    flat = pca_colors(np.ones((50, 5)))
    assert np.allclose(flat, 0.5)


def test_spatial_neighbors_line():
    pos = np.zeros((10, 3))
    pos[:, 0] = np.arange(10.0)
    nbr = spatial_neighbors(pos, 2)
    assert nbr.shape == (10, 2)
    assert (nbr != np.arange(10)[:, None]).all()   # never self
    assert set(nbr[5]) == {4, 6}


def test_export_load_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    f = init_features(32, 8, rng)
    fs = FeatureSet(features=f, tau=0.1)
    path = tmp_path / "feat.bin"
    sidecar = export_features(path, fs)
    back = load_features(path)
    assert np.array_equal(back.features, f)   # float64 storage is lossless
    assert back.tau == 0.1
    side = json.loads(open(sidecar).read())
    assert side["n"] == 32 and side["k"] == 8
    assert side["dtype"] == "float64"


def test_load_rejects_garbage(tmp_path):
    from hullfield.errors import ParseError
    path = tmp_path / "bad.bin"
    path.write_bytes(b"not a feature file")
    with pytest.raises(ParseError):
        load_features(path)

"""Recursive bisection: split mechanics, termination guards, sweeps.

Several tests drive the splitter with fabricated "ideal" feature fields
(one sample pinned to each face centroid) so the expected partition is
known exactly and no optimizer noise enters.
"""

import numpy as np
import pytest

from hullfield import shapes
from hullfield.decompose import (Component, FieldContext, _two_means_sphere,
                                 binary_split, face_adjacency_lengths,
                                 granularity_sweep, recursive_decompose,
                                 sweep_table)
from hullfield.errors import Indivisible
from hullfield.mesh import SurfaceSamples


def centroid_samples(solid):
    """One synthetic sample per face, sitting at the face centroid."""
    centers = solid.vertices[solid.faces].mean(axis=1)
    return SurfaceSamples(positions=centers,
                          normals=solid.face_normals,
                          face_ids=np.arange(len(solid.faces),
                                             dtype=np.int32))


def ideal_context(solid, side_fn, k=8):
    """FieldContext whose features encode a known binary partition."""
    samples = centroid_samples(solid)
    side = np.asarray([side_fn(p) for p in samples.positions])
    feats = np.zeros((len(samples), k))
    feats[:, 0] = np.where(side, 1.0, -1.0)
    return FieldContext(solid, samples, feats, mode="mesh"), side


def constant_context(solid, k=8):
    samples = centroid_samples(solid)
    feats = np.zeros((len(samples), k))
    feats[:, 0] = 1.0
    return FieldContext(solid, samples, feats, mode="mesh")


def root_component(solid, samples):
    return Component(
        sample_ids=np.arange(len(samples), dtype=np.int64),
        face_ids=np.arange(len(solid.faces), dtype=np.int64))


def arm_side(p):
    # the x >= 1 arm of the L, minus the notch wall on the upright
    return p[0] >= 1.0 and p[1] <= 1.0


def groove_block():
    occ = np.ones((16, 2, 2), dtype=bool)
    occ[:, 0, 1] = False
    return shapes.voxel_surface(occ)


def test_face_adjacency_closed_mesh():
    for solid in (shapes.box(), shapes.tetrahedron()):
        pairs, lengths = face_adjacency_lengths(solid)
        nf = len(solid.faces)
        assert len(pairs) == 3 * nf // 2   # every edge shared exactly twice
        assert (lengths > 0).all()
        deg = np.bincount(pairs.ravel(), minlength=nf)
        assert (deg == 3).all()
        assert (pairs[:, 0] != pairs[:, 1]).all()
        key = pairs.min(axis=1) * nf + pairs.max(axis=1)
        assert len(np.unique(key)) == len(pairs)


def test_two_means_separates_antipodal_clusters():
    rng = np.random.default_rng(0)
    a = rng.normal([1, 0, 0, 0], 0.05, size=(30, 4))
    b = rng.normal([-1, 0, 0, 0], 0.05, size=(30, 4))
    feats = np.concatenate([a, b])
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    lab, margin = _two_means_sphere(feats)
    assert margin is not None
    assert len(np.unique(lab[:30])) == 1
    assert len(np.unique(lab[30:])) == 1
    assert lab[0] != lab[30]
    # margin sign tracks the label: cluster 0 is the c0 side
    assert (np.sign(margin[:30]) == np.sign(margin[0])).all()
    assert (np.sign(margin[30:]) == -np.sign(margin[0])).all()


def test_two_means_degenerate_input():
    feats = np.tile([1.0, 0.0], (10, 1))
    lab, margin = _two_means_sphere(feats)
    assert margin is None
    assert lab.min() == lab.max()


def test_binary_split_recovers_planted_partition():
    el = shapes.el_prism(cell=0.25)
    ctx, side = ideal_context(el, arm_side)
    comp = root_component(el, ctx.samples)
    a, b = binary_split(comp, ctx)
    got = {frozenset(a.face_ids.tolist()), frozenset(b.face_ids.tolist())}
    want_arm = frozenset(np.flatnonzero(side).tolist())
    want_rest = frozenset(np.flatnonzero(~side).tolist())
    assert got == {want_arm, want_rest}
    ids = np.sort(np.concatenate([a.sample_ids, b.sample_ids]))
    assert np.array_equal(ids, np.arange(len(ctx.samples)))


def test_binary_split_constant_features_balanced():
    cube = shapes.box()
    ctx = constant_context(cube)
    a, b = binary_split(root_component(cube, ctx.samples), ctx)
    assert len(a.face_ids) > 0 and len(b.face_ids) > 0
    total = len(a.face_ids) + len(b.face_ids)
    assert total == len(cube.faces)
    # lockstep growth keeps the two sides comparable in size
    assert min(len(a.face_ids), len(b.face_ids)) >= total // 4


def test_binary_split_single_face_indivisible():
    cube = shapes.box()
    ctx = constant_context(cube)
    comp = Component(sample_ids=np.array([0]), face_ids=np.array([0]))
    with pytest.raises(Indivisible):
        binary_split(comp, ctx)


def test_recursive_decompose_el_two_leaves():
    el = shapes.el_prism(cell=0.25)
    ctx, side = ideal_context(el, arm_side)
    dec = recursive_decompose(el, ctx, epsilon=0.05, max_hulls=8,
                              seed=0, n_metric_samples=4000)
    assert len(dec.leaves) == 2
    assert all(leaf.concavity.value < 0.05 for leaf in dec.leaves)
    assert all(leaf.flags == () for leaf in dec.leaves)
    assert sorted(leaf.path for leaf in dec.leaves) == [(0,), (1,)]
    assert dec.stats["n_splits"] == 1
    assert len(dec.tree) == 3
    # the root pops first and carries the largest concavity
    pops = dec.stats["pops"]
    assert pops[0][0] == 0
    assert pops[0][1] >= max(p[1] for p in pops[1:])
    assert pops[1][1] >= pops[2][1]
    ids = np.sort(np.concatenate([leaf.sample_ids for leaf in dec.leaves]))
    assert np.array_equal(ids, np.arange(len(ctx.samples)))
    fids = np.sort(np.concatenate([leaf.face_ids for leaf in dec.leaves]))
    assert np.array_equal(fids, np.arange(len(el.faces)))
    assert dec.metrics["n_components"] == 2
    assert dec.metrics["max_concavity"] < 0.05
    rec = dec.tree_records()
    assert rec[0]["children"] == [1, 2]
    assert rec[1]["parent"] == 0


def test_budget_cap_flags():
    el = shapes.el_prism(cell=0.25)
    ctx, _ = ideal_context(el, arm_side)
    dec = recursive_decompose(el, ctx, epsilon=0.001, max_hulls=1,
                              seed=0, n_metric_samples=2000, evaluate=False)
    assert len(dec.leaves) == 1
    assert dec.leaves[0].flags == ("cap",)
    assert dec.stats["n_splits"] == 0


def test_budget_cap_respected_mid_run():
    block = groove_block()
    ctx = constant_context(block)
    dec = recursive_decompose(block, ctx, epsilon=1e-6, max_hulls=3,
                              seed=0, n_metric_samples=2000, evaluate=False)
    assert len(dec.leaves) == 3
    assert all(leaf.flags for leaf in dec.leaves)
    fids = np.sort(np.concatenate([leaf.face_ids for leaf in dec.leaves]))
    assert np.array_equal(fids, np.arange(len(block.faces)))


def test_stalled_lineage_flagged():
    # constant features force balanced cuts; every child keeps the full
    # groove depth, so concavity cannot improve and the lineage must stall
    block = groove_block()
    ctx = constant_context(block)
    dec = recursive_decompose(block, ctx, epsilon=0.01, max_hulls=64,
                              seed=0, n_metric_samples=2000, evaluate=False)
    flags = [f for leaf in dec.leaves for f in leaf.flags]
    assert "stalled" in flags
    assert all(leaf.concavity.value < 0.01 or leaf.flags
               for leaf in dec.leaves)
    fids = np.sort(np.concatenate([leaf.face_ids for leaf in dec.leaves]))
    assert np.array_equal(fids, np.arange(len(block.faces)))


def test_pointcloud_mode_splits_disjoint_clusters():
    a = shapes.box(half=(0.5, 0.5, 0.5), center=(-1.2, 0.0, 0.0))
    b = shapes.box(half=(0.5, 0.5, 0.5), center=(1.2, 0.0, 0.0))
    solid = shapes.merge_solids([a, b])
    samples = solid.sample_surface(800, np.random.default_rng(0))
    feats = np.zeros((len(samples), 4))
    feats[:, 0] = np.where(samples.positions[:, 0] > 0, 1.0, -1.0)
    ctx = FieldContext(solid, samples, feats, mode="pointcloud")
    dec = recursive_decompose(solid, ctx, epsilon=0.05, max_hulls=4,
                              seed=0, n_metric_samples=3000)
    assert len(dec.leaves) == 2
    for leaf in dec.leaves:
        xs = samples.positions[leaf.sample_ids][:, 0]
        assert (xs > 0).all() or (xs < 0).all()
        assert leaf.face_ids is None
    assert dec.metrics["max_concavity"] < 0.05


def test_invalid_arguments():
    cube = shapes.box()
    ctx = constant_context(cube)
    with pytest.raises(ValueError):
        recursive_decompose(cube, ctx, epsilon=0.0, max_hulls=4)
    with pytest.raises(ValueError):
        recursive_decompose(cube, ctx, epsilon=0.1, max_hulls=0)


def test_granularity_sweep_ordering():
    el = shapes.el_prism(cell=0.25)
    ctx, _ = ideal_context(el, arm_side)
    decs = granularity_sweep(el, ctx, epsilons=[0.05, 0.55], max_hulls=8,
                             seed=0, n_metric_samples=3000)
    rows = sweep_table(decs)
    assert [r["epsilon"] for r in rows] == [0.55, 0.05]
    assert rows[0]["n_components"] == 1
    assert rows[1]["n_components"] == 2
    assert rows[1]["max_concavity"] <= rows[0]["max_concavity"]
    for r in rows:
        assert set(r) == {"epsilon", "n_components", "max_concavity",
                          "reconstruction_error"}

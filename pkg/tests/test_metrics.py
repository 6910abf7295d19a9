"""Concavity and reconstruction metrics against analytic solids.

The L prism ([0,2]x[0,2]x[0,1] minus the [1,2]x[1,2] quadrant) has a
hand-computable concavity: its hull adds the prism over the triangle
(1,1),(2,1),(1,2), and the farthest hull point from the L is the notch
corner line at mid-height, distance exactly 0.5.
"""

import numpy as np
import pytest

from hullfield import shapes
from hullfield.hulls import convex_hull
from hullfield.metrics import (ConcavityScore, concavity,
                               evaluate_decomposition, reconstruction_error,
                               uniform_in_hull)


def _gold_boxes():
    # x-cut of the L: arm box plus upright box, exact cover
    b1 = shapes.box(half=(0.5, 0.5, 0.5), center=(1.5, 0.5, 0.5))
    b2 = shapes.box(half=(0.5, 1.0, 0.5), center=(0.5, 1.0, 0.5))
    return b1, b2


def test_concavity_score_value_is_max():
    s = ConcavityScore(surface_h=0.2, volume_h=0.7)
    assert s.value == 0.7
    assert ConcavityScore(surface_h=0.3, volume_h=0.1).value == 0.3
    d = s.to_dict()
    assert d["value"] == 0.7 and d["volume_fallback"] is False


def test_cube_concavity_zero():
    cube = shapes.box()
    hull = convex_hull(cube.vertices)
    score = concavity(hull, cube, n_samples=4000, rng=0)
    assert score.value < 1e-7
    assert not score.volume_fallback


def test_el_concavity_half():
    el = shapes.el_prism()
    hull = convex_hull(el.vertices)
    score = concavity(hull, el, n_samples=20000, rng=0)
    assert 0.49 < score.value <= 0.5 + 1e-9
    # mean-based variant is strictly milder than the max
    cham = concavity(hull, el, n_samples=20000, rng=0, metric="chamfer")
    assert 0.0 < cham.value < score.value


def test_patch_component_scores_zero():
    # one exact component of the L: the arm box with its own surface patch
    el = shapes.el_prism()
    b1, _ = _gold_boxes()
    hull = convex_hull(b1.vertices)
    score = concavity(hull, el, patch=b1, n_samples=4000, rng=0)
    assert score.value < 1e-6


def test_region_component_scores_zero():
    # same component without a patch: boundary of (solid intersect hull)
    el = shapes.el_prism()
    b1, _ = _gold_boxes()
    hull = convex_hull(b1.vertices)
    score = concavity(hull, el, patch=None, n_samples=4000, rng=0)
    assert score.value < 1e-6


def test_disjoint_hull_volume_fallback():
    cube = shapes.box()
    far = shapes.box(half=(0.3, 0.3, 0.3), center=(5.0, 0.0, 0.0))
    hull = convex_hull(far.vertices)
    score = concavity(hull, cube, n_samples=500, rng=0)
    assert score.volume_fallback
    assert score.volume_h == 0.0


def test_reconstruction_exact_cover():
    el = shapes.el_prism()
    hulls = [convex_hull(b.vertices) for b in _gold_boxes()]
    err = reconstruction_error(el, hulls, n_samples=8000, rng=0)
    assert err < 1e-6


def test_reconstruction_single_hull_on_el():
    # hull slant face sits up to ~0.5 away; the mean stays well below that
    el = shapes.el_prism()
    err = reconstruction_error(el, [convex_hull(el.vertices)],
                               n_samples=8000, rng=0)
    assert 0.01 < err < 0.2


def test_reconstruction_disjoint_union():
    a = shapes.box(half=(0.5, 0.5, 0.5), center=(-1.0, 0.0, 0.0))
    b = shapes.box(half=(0.5, 0.5, 0.5), center=(1.5, 0.0, 0.0))
    solid = shapes.merge_solids([a, b])
    hulls = [convex_hull(a.vertices), convex_hull(b.vertices)]
    err = reconstruction_error(solid, hulls, n_samples=6000, rng=0)
    assert err < 1e-6


def test_reconstruction_requires_hulls():
    with pytest.raises(ValueError):
        reconstruction_error(shapes.box(), [], n_samples=100, rng=0)


def test_uniform_in_hull_inside_and_centered():
    cube = shapes.box()
    hull = convex_hull(cube.vertices)
    pts = uniform_in_hull(hull, 5000, np.random.default_rng(0))
    assert hull.contains(pts, tol=1e-9).all()
    assert np.abs(pts.mean(axis=0)).max() < 0.1
    again = uniform_in_hull(hull, 5000, np.random.default_rng(0))
    assert np.array_equal(pts, again)


def test_evaluate_decomposition_shape():
    el = shapes.el_prism()
    hulls = [convex_hull(b.vertices) for b in _gold_boxes()]
    out = evaluate_decomposition(el, hulls, n_samples=4000, seed=0)
    assert out["n_components"] == 2
    assert len(out["per_hull"]) == 2
    vals = [h["value"] for h in out["per_hull"]]
    assert out["max_concavity"] == max(vals)
    assert abs(out["mean_concavity"] - np.mean(vals)) < 1e-15
    assert out["max_concavity"] < 1e-6
    assert out["reconstruction_error"] < 1e-6
    assert out["metric"] == "hausdorff"
    assert out["n_metric_samples"] == 4000


def test_evaluate_thread_count_invariant():
    el = shapes.el_prism()
    hulls = [convex_hull(b.vertices) for b in _gold_boxes()]
    serial = evaluate_decomposition(el, hulls, n_samples=3000, seed=3)
    threaded = evaluate_decomposition(el, hulls, n_samples=3000, seed=3,
                                      threads=2)
    assert serial == threaded
    repeat = evaluate_decomposition(el, hulls, n_samples=3000, seed=3)
    assert serial == repeat

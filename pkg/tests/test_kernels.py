"""Ray/closest-point kernels: analytic oracles and backend parity.

The brute backend is the reference implementation; the compiled backend
must agree with it bit-for-bit on hit counts and to float tolerance on
hit parameters and closest points.
"""

import numpy as np
import pytest

from hullfield import shapes
from hullfield.kernels import (DEFAULT_BACKEND, HAVE_COMPILED, FallbackAccel,
                               make_accel)

needs_compiled = pytest.mark.skipif(not HAVE_COMPILED,
                                    reason="compiled extension not built")


def _unit_rows(rng, n):
    d = rng.standard_normal((n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_backend_selection():
    cube = shapes.box()
    assert make_accel(cube.vertices, cube.faces, "brute").backend == "brute"
    auto = make_accel(cube.vertices, cube.faces, "auto")
    assert auto.backend == DEFAULT_BACKEND
    with pytest.raises(ValueError):
        make_accel(cube.vertices, cube.faces, "gpu")
    if not HAVE_COMPILED:
        with pytest.raises(RuntimeError):
            make_accel(cube.vertices, cube.faces, "compiled")


def test_axis_ray_against_unit_cube():
    # cube spans [-1, 1]^3; a +x ray from (-2, 0.1, 0.2) enters at t=1
    cube = shapes.box()
    acc = FallbackAccel(cube.vertices, cube.faces)
    o = np.array([[-2.0, 0.1, 0.2]])
    d = np.array([[1.0, 0.0, 0.0]])
    t, _ = acc.closest(o, d, 0.0, np.inf)
    assert abs(t[0] - 1.0) < 1e-12
    n = acc.count_hits(o, d, 0.0, np.inf)
    assert n[0] == 2  # entry and exit
    assert acc.any_hit(o, d, 0.0, np.inf)[0]
    assert not acc.any_hit(o, d, 0.0, 0.5)[0]


def test_hit_window_semantics():
    # a hit counts iff t_min < t <= t_max
    cube = shapes.box()
    acc = FallbackAccel(cube.vertices, cube.faces)
    o = np.array([[-2.0, 0.1, 0.2]])
    d = np.array([[1.0, 0.0, 0.0]])
    assert acc.count_hits(o, d, 0.0, 1.0)[0] == 1   # t=1 inclusive
    assert acc.count_hits(o, d, 1.0, 3.0)[0] == 1   # t=1 excluded, t=3 kept
    assert acc.count_hits(o, d, 1.0, 2.0)[0] == 0
    # direction length scales t
    t, _ = acc.closest(o, 2.0 * d, 0.0, np.inf)
    assert abs(t[0] - 0.5) < 1e-12


def test_closest_point_analytic():
    cube = shapes.box()
    acc = FallbackAccel(cube.vertices, cube.faces)
    q = np.array([[3.0, 0.0, 0.0],     # face: distance 2
                  [2.0, 2.0, 0.0],     # edge: sqrt(2)
                  [2.0, 2.0, 2.0],     # corner: sqrt(3)
                  [0.1, 0.2, 0.3]])    # interior: 0.7 to z=1 plane
    d, _, p = acc.closest_point(q)
    want = [2.0, np.sqrt(2.0), np.sqrt(3.0), 0.7]
    assert np.allclose(d, want, atol=1e-12)
    assert np.allclose(p[0], [1.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(p[2], [1.0, 1.0, 1.0], atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("maker", ["torus", "blob"])
def test_compiled_matches_brute_rays(maker):
    mesh = getattr(shapes, maker)()
    fast = make_accel(mesh.vertices, mesh.faces, "compiled")
    slow = make_accel(mesh.vertices, mesh.faces, "brute")
    rng = np.random.default_rng(11)
    n = 1500
    o = rng.uniform(-2.0, 2.0, (n, 3))
    d = _unit_rows(rng, n)
    t_f, f_f = fast.closest(o, d, 0.0, np.inf)
    t_s, f_s = slow.closest(o, d, 0.0, np.inf)
    hit = np.isfinite(t_s)
    assert np.array_equal(hit, np.isfinite(t_f))
    assert np.allclose(t_f[hit], t_s[hit], rtol=1e-9, atol=1e-12)
    # face ids may differ only where two triangles tie on t
    ordinary = hit & (f_f != -1)
    same = f_f == f_s
    assert (same | ~ordinary).mean() > 0.999
    assert np.array_equal(fast.any_hit(o, d, 0.0, np.inf),
                          slow.any_hit(o, d, 0.0, np.inf))
    assert np.array_equal(fast.count_hits(o, d, 0.0, np.inf),
                          slow.count_hits(o, d, 0.0, np.inf))


@needs_compiled
def test_compiled_matches_brute_closest_point():
    mesh = shapes.torus()
    fast = make_accel(mesh.vertices, mesh.faces, "compiled")
    slow = make_accel(mesh.vertices, mesh.faces, "brute")
    rng = np.random.default_rng(5)
    q = rng.uniform(-1.5, 1.5, (800, 3))
    d_f, _, p_f = fast.closest_point(q)
    d_s, _, p_s = slow.closest_point(q)
    assert np.allclose(d_f, d_s, rtol=1e-9, atol=1e-12)
    # closest points agree wherever the minimizer is unique
    agree = np.linalg.norm(p_f - p_s, axis=1) < 1e-9
    assert agree.mean() > 0.999


@needs_compiled
def test_compiled_matches_brute_hit_window():
    mesh = shapes.torus()
    fast = make_accel(mesh.vertices, mesh.faces, "compiled")
    slow = make_accel(mesh.vertices, mesh.faces, "brute")
    rng = np.random.default_rng(23)
    n = 600
    o = rng.uniform(-1.5, 1.5, (n, 3))
    d = _unit_rows(rng, n)
    tmin = rng.uniform(0.0, 0.5, n)
    tmax = tmin + rng.uniform(0.1, 2.0, n)
    assert np.array_equal(fast.count_hits(o, d, tmin, tmax),
                          slow.count_hits(o, d, tmin, tmax))
    assert np.array_equal(fast.any_hit(o, d, tmin, tmax),
                          slow.any_hit(o, d, tmin, tmax))

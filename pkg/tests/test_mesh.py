"""Mesh loading, validation, sampling and IO against analytic solids."""

import numpy as np
import pytest

from hullfield import shapes
from hullfield.errors import NonManifold
from hullfield.mesh import (SolidMesh, TriangleSoup, _parse_obj, load_mesh,
                            save_obj, save_obj_groups, save_ply_points,
                            weld_vertices)


def test_cube_area_and_volume():
    cube = shapes.box()  # [-1, 1]^3
    assert abs(cube.area - 24.0) < 1e-12
    assert abs(cube.volume - 8.0) < 1e-12


def test_tetrahedron_volume():
    tet = shapes.tetrahedron(scale=1.0)
    # vertices (+-1,+-1,+-1)/sqrt(3) pattern: edge a = 2*sqrt(2/3),
    # volume a^3 / (6 sqrt 2)
    a = 2.0 * np.sqrt(2.0 / 3.0)
    assert abs(tet.volume - a ** 3 / (6.0 * np.sqrt(2.0))) < 1e-12


def test_torus_volume_near_analytic():
    t = shapes.torus(R=0.65, r=0.3, nu=96, nv=48)
    exact = 2.0 * np.pi ** 2 * 0.65 * 0.3 ** 2
    assert abs(t.volume - exact) / exact < 0.01   # inscribed, slightly less
    assert t.volume < exact


def test_el_prism_geometry():
    el = shapes.el_prism()
    assert abs(el.volume - 3.0) < 1e-12
    assert abs(el.area - 14.0) < 1e-12
    lo, hi = el.bbox
    assert np.allclose(lo, 0.0) and np.allclose(hi, [2.0, 2.0, 1.0])


def test_open_surface_rejected():
    quad = np.asarray([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]],
                      dtype=np.float64)
    with pytest.raises(NonManifold):
        SolidMesh(quad, np.asarray([[0, 1, 2], [0, 2, 3]]))


def test_inconsistent_winding_rejected():
    cube = shapes.box(subdiv=1)
    faces = cube.faces.copy()
    faces[0] = faces[0][::-1]
    with pytest.raises(NonManifold):
        SolidMesh(cube.vertices, faces)


def test_is_inside_el():
    el = shapes.el_prism()
    pts = np.array([[0.5, 0.5, 0.5],   # in the common corner box
                    [1.5, 0.5, 0.5],   # in the x arm
                    [0.5, 1.5, 0.5],   # in the y arm
                    [1.5, 1.5, 0.5],   # in the notch: outside
                    [0.5, 0.5, 1.5],   # above
                    [-0.1, 0.5, 0.5]])
    want = [True, True, True, False, False, False]
    assert np.array_equal(el.is_inside(pts), want)


def test_sample_surface_area_uniform():
    cube = shapes.box()
    n = 24000
    s = cube.sample_surface(n, np.random.default_rng(0))
    assert len(s) == n
    # points lie on the surface
    d, _, _ = cube.closest_surface_points(s.positions)
    assert d.max() < 1e-9
    # outward unit normals (cube is star-shaped around the origin)
    assert np.allclose(np.linalg.norm(s.normals, axis=1), 1.0)
    assert ((s.positions * s.normals).sum(axis=1) > 0).all()
    # each of the six sides has area 4/24 of the total
    side = np.argmax(np.abs(s.positions) > 1.0 - 1e-9, axis=1)
    sign = np.take_along_axis(s.positions, side[:, None], 1)[:, 0] > 0
    counts = np.bincount(side * 2 + sign.astype(int), minlength=6)
    assert counts.min() > 0
    # binomial(n, 1/6) five-sigma band
    sd = np.sqrt(n * (1 / 6) * (5 / 6))
    assert np.abs(counts - n / 6).max() < 5 * sd


def test_sample_surface_deterministic():
    el = shapes.el_prism()
    a = el.sample_surface(512, np.random.default_rng(9))
    b = el.sample_surface(512, np.random.default_rng(9))
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.face_ids, b.face_ids)


def test_sample_volume_inside_and_acceptance():
    el = shapes.el_prism()
    pts, acc = el.sample_volume(2000, np.random.default_rng(1),
                                return_acceptance=True)
    assert len(pts) == 2000
    assert el.is_inside(pts).all()
    # acceptance ratio approximates volume / bbox volume = 3/4
    assert abs(acc - 0.75) < 0.05


def test_normalize_round_trip():
    el = shapes.el_prism()
    norm, center, scale = el.normalize()
    lo, hi = norm.bbox
    assert abs(max(hi - lo) - 2.0) < 1e-12
    assert np.allclose(lo + hi, 0.0, atol=1e-12)
    back = norm.vertices * scale + center
    assert np.allclose(back, el.vertices, atol=1e-12)


def test_face_adjacency_closed():
    el = shapes.el_prism()
    adj = el.face_adjacency()
    degrees = np.asarray(adj.sum(axis=1)).ravel()
    assert (degrees == 3).all()   # closed manifold: 3 neighbors per face
    assert (adj != adj.T).nnz == 0


def test_submesh_soup_area():
    cube = shapes.box(subdiv=1)
    top = np.flatnonzero(cube.face_normals[:, 2] > 0.5)
    soup = cube.submesh_soup(top)
    assert isinstance(soup, TriangleSoup)
    assert abs(soup.area - 4.0) < 1e-12


def test_obj_round_trip(tmp_path):
    el = shapes.el_prism()
    path = tmp_path / "el.obj"
    save_obj(path, el.vertices, el.faces)
    verts, faces = _parse_obj(path)
    # repr-formatted floats reparse to identical doubles
    assert np.array_equal(verts, el.vertices)
    assert np.array_equal(faces, el.faces)
    again = load_mesh(str(path))
    assert abs(again.volume - el.volume) < 1e-12


def test_obj_groups(tmp_path):
    cube = shapes.box(subdiv=1)
    path = tmp_path / "two.obj"
    save_obj_groups(path, [("a", cube.vertices, cube.faces),
                           ("b", cube.vertices + 5.0, cube.faces)])
    text = path.read_text()
    assert text.count("g ") == 2
    verts, faces = _parse_obj(path)
    assert len(verts) == 2 * len(cube.vertices)
    assert len(faces) == 2 * len(cube.faces)


def test_ply_ascii_parse(tmp_path):
    tet = shapes.tetrahedron()
    lines = ["ply", "format ascii 1.0",
             f"element vertex {len(tet.vertices)}",
             "property float x", "property float y", "property float z",
             f"element face {len(tet.faces)}",
             "property list uchar int vertex_indices", "end_header"]
    for v in tet.vertices:
        lines.append(" ".join(repr(float(c)) for c in v))
    for f in tet.faces:
        lines.append("3 " + " ".join(str(int(i)) for i in f))
    path = tmp_path / "tet.ply"
    path.write_text("\n".join(lines) + "\n")
    mesh = load_mesh(str(path))
    assert abs(mesh.volume - tet.volume) < 1e-6


def test_ply_points_round_trip(tmp_path):
    pts = np.random.default_rng(2).uniform(-1, 1, (64, 3))
    colors = np.random.default_rng(3).integers(0, 256, (64, 3),
                                               dtype=np.uint8)
    path = tmp_path / "pts.ply"
    save_ply_points(path, pts, colors)
    head = path.read_bytes()[:200].decode("ascii", "ignore")
    assert "element vertex 64" in head


def test_weld_vertices():
    tri = np.asarray([[0, 0, 0], [1, 0, 0], [0, 1, 0],
                      [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=np.float64)
    faces = np.asarray([[0, 1, 2], [3, 4, 5]])
    verts, welded = weld_vertices(tri, faces)
    assert len(verts) == 4
    assert welded.max() == 3


def test_missing_file_raises():
    with pytest.raises(FileNotFoundError):
        load_mesh("/nonexistent/mesh.obj")


def test_cast_rays_on_el():
    # query points off the 0.125 voxel grid so no ray runs along an edge
    el = shapes.el_prism()
    o = np.array([[0.53, 0.51, -1.0], [1.5, 1.53, 0.47]])
    d = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]])
    t, face, pts = el.cast_rays(o, d, 0.0, np.inf)
    assert abs(t[0] - 1.0) < 1e-12      # hits z=0 bottom
    assert abs(t[1] - 0.5) < 1e-12      # notch point hits x=1 wall
    assert np.isfinite(t).all()
    assert np.allclose(pts[1], [1.0, 1.53, 0.47], atol=1e-12)

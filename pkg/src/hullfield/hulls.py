"""Convex hull construction and membership queries.

Hulls come from Qhull via scipy; degenerate (planar or thinner) point sets
are inflated by a +-1e-4 slab along the best-fit plane normal before
retrying, since zero-volume hulls are useless downstream. A hull is stored
as a triangle soup with outward face planes so that ray casting, closest
point, and half-space membership all work on the same object.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull as _QHull
from scipy.spatial import QhullError

from .errors import DegenerateHull, NonConvexInput
from .mesh import TriangleSoup

SLAB_EPS = 1e-4
# Tolerance (relative to bbox diagonal) when checking that a loaded soup
# really bounds a convex region.
CONVEXITY_REL_TOL = 1e-6


@dataclass
class ConvexHullMesh(TriangleSoup):
    """Triangulated convex hull with outward unit-normal face planes.

    planes holds one row (nx, ny, nz, d) per face with n.x <= d inside.
    """

    planes: np.ndarray = None
    volume: float = 0.0

    def contains(self, points, tol=0.0):
        """Boolean mask: which points satisfy every face half-space."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = self.planes[:, :3]
        d = self.planes[:, 3]
        out = np.empty(len(points), dtype=bool)
        step = max(1, int(4e6) // max(len(d), 1))
        for s in range(0, len(points), step):
            chunk = points[s:s + step]
            out[s:s + step] = (chunk @ n.T - d).max(axis=1) <= tol
        return out

    def max_plane_violation(self, points):
        """Largest signed distance outside any face plane (<=0 means inside)."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = self.planes[:, :3]
        d = self.planes[:, 3]
        worst = -np.inf
        step = max(1, int(4e6) // max(len(d), 1))
        for s in range(0, len(points), step):
            chunk = points[s:s + step]
            worst = max(worst, float((chunk @ n.T - d).max()))
        return worst


def planes_from_faces(vertices, faces, normals=None):
    """Outward (n, d) rows derived from triangle geometry, n.x <= d inside."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if normals is None:
        tri = vertices[faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norms = np.linalg.norm(cross, axis=1)
        normals = cross / np.maximum(norms, 1e-300)[:, None]
    d = np.einsum("ij,ij->i", normals, vertices[faces[:, 0]])
    return np.concatenate([normals, d[:, None]], axis=1)


def _soup_volume(vertices, faces):
    """Signed volume via the divergence theorem; outward faces give > 0."""
    tri = np.asarray(vertices, dtype=np.float64)[faces]
    return float(np.einsum(
        "ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)


def _from_qhull(hull, backend):
    order = hull.vertices
    remap = np.full(len(hull.points), -1, dtype=np.int64)
    remap[order] = np.arange(len(order))
    vertices = np.ascontiguousarray(hull.points[order])
    faces = remap[hull.simplices]
    # Qhull's simplices are not consistently wound; its equations are the
    # outward planes, so flip triangles whose geometric normal disagrees.
    tri = vertices[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    eq_n = hull.equations[:, :3]
    flip = np.einsum("ij,ij->i", cross, eq_n) < 0
    faces[flip] = faces[flip][:, ::-1]
    norms = np.linalg.norm(eq_n, axis=1)
    planes = np.concatenate(
        [eq_n / norms[:, None], (-hull.equations[:, 3] / norms)[:, None]],
        axis=1)
    return ConvexHullMesh(vertices=vertices, faces=faces, backend=backend,
                          planes=planes, volume=float(hull.volume))


def convex_hull(points, backend="auto"):
    """Exact convex hull of a full-dimensional point set.

    Raises DegenerateHull when the points are coplanar or worse; callers
    that must always get a solid use robust_hull instead.
    """
    points = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    if points.ndim != 2 or points.shape[1] != 3:
        raise DegenerateHull("expected an (n, 3) point array")
    if len(points) < 4:
        raise DegenerateHull(f"need >= 4 points, got {len(points)}")
    try:
        return _from_qhull(_QHull(points), backend)
    except QhullError as exc:
        raise DegenerateHull(f"degenerate point set: {exc}") from exc


def robust_hull(points, backend="auto"):
    """convex_hull with a slab-inflation fallback for flat point sets.

    Planar clusters are legitimate outputs of surface partitioning; they
    are thickened by +-SLAB_EPS along the best-fit plane normal (then, if
    still degenerate, along all three axes) so the hull has volume.
    """
    points = np.asarray(points, dtype=np.float64)
    try:
        return convex_hull(points, backend)
    except DegenerateHull:
        pass
    centered = points - points.mean(axis=0, keepdims=True)
    # smallest singular vector = best-fit plane normal
    try:
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        normal = vt[-1]
    except np.linalg.LinAlgError:
        normal = np.array([0.0, 0.0, 1.0])
    inflated = np.concatenate([points + SLAB_EPS * normal,
                               points - SLAB_EPS * normal])
    try:
        return convex_hull(inflated, backend)
    except DegenerateHull:
        pass
    offsets = SLAB_EPS * np.concatenate([np.eye(3), -np.eye(3)])
    inflated = (points[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    try:
        return convex_hull(inflated, backend)
    except DegenerateHull as exc:
        raise DegenerateHull(
            f"point set degenerate even after slab inflation: {exc}") from exc


def hull_from_surface(vertices, faces, backend="auto"):
    """Wrap an already-triangulated hull surface without re-hulling it.

    Used when reloading exported hull files: planes are derived from the
    triangles as written, so membership tests reproduce the original hull
    bit-for-bit instead of drifting through a second Qhull pass. Raises
    NonConvexInput if the soup is not convex within tolerance.
    """
    soup = ConvexHullMesh(vertices=vertices, faces=faces, backend=backend)
    soup.planes = planes_from_faces(soup.vertices, soup.faces,
                                    soup.face_normals)
    soup.volume = _soup_volume(soup.vertices, soup.faces)
    tol = CONVEXITY_REL_TOL * max(soup.bbox_diag, 1e-12)
    worst = soup.max_plane_violation(soup.vertices)
    if worst > tol:
        raise NonConvexInput(
            f"surface is not convex: vertex sticks out {worst:.3g} "
            f"(tol {tol:.3g})")
    if soup.volume <= 0:
        raise NonConvexInput("surface encloses no positive volume")
    return soup

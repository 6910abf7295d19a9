"""Concavity and reconstruction metrics.

Concavity of a component follows the max-of-two-Hausdorff definition:
the surface term compares the component's boundary with its hull's
boundary, and the volume term compares the solid region the component
bounds (parent solid restricted to the hull) with the hull's interior.
Distances are measured from sample points to exact closest points on the
opposing geometry, never sample-to-sample, so convex inputs score zero up
to floating-point noise instead of being floored by sampling density.

A chamfer variant (means instead of maxima) is available behind the
metric flag; reconstruction error is always the mean symmetric Chamfer
between the input surface and the boundary of the union of hulls.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .seeding import STAGE_METRICS, stage_rng

# Relative half-space slack when deciding whether a point counts as inside
# a hull; scaled by the hull's bbox diagonal.
HULL_TOL_REL = 1e-9
# Retry multiplier for interior sampling before declaring a component
# volume empty.
EMPTY_INTERIOR_ROUNDS = 4


@dataclass
class ConcavityScore:
    surface_h: float
    volume_h: float
    # True when interior sampling starved and value is the surface term
    volume_fallback: bool = False

    @property
    def value(self):
        return max(self.surface_h, self.volume_h)

    def to_dict(self):
        return {
            "surface_h": self.surface_h,
            "volume_h": self.volume_h,
            "value": self.value,
            "volume_fallback": self.volume_fallback,
        }


def uniform_in_hull(hull, count, rng):
    """Exact uniform interior samples via a tetrahedral fan.

    The hull is star-shaped from its vertex centroid, so fanning each
    surface triangle to the centroid tiles the interior with tetrahedra;
    pick a tetrahedron by volume, then fold a unit-cube sample into
    barycentric coordinates.
    """
    c = hull.vertices.mean(axis=0)
    tri = hull.vertices[hull.faces]
    ea = tri[:, 0] - c
    eb = tri[:, 1] - c
    ec = tri[:, 2] - c
    vols = np.einsum("ij,ij->i", ea, np.cross(eb, ec)) / 6.0
    vols = np.maximum(vols, 0.0)
    total = vols.sum()
    if total <= 0:
        raise ValueError("hull has no volume to sample")
    pick = rng.choice(len(vols), size=count, p=vols / total)

    s = rng.random(count)
    t = rng.random(count)
    u = rng.random(count)
    fold = s + t > 1.0
    s = np.where(fold, 1.0 - s, s)
    t = np.where(fold, 1.0 - t, t)
    c2 = t + u > 1.0
    c3 = ~c2 & (s + t + u > 1.0)
    t_n = np.where(c2, 1.0 - u, t)
    u_n = np.where(c2, 1.0 - s - t, u)
    s_n = np.where(c3, 1.0 - t - u, s)
    u_n = np.where(c3, s + t + u - 1.0, u_n)
    s, t, u = s_n, t_n, u_n
    return (c + s[:, None] * ea[pick] + t[:, None] * eb[pick]
            + u[:, None] * ec[pick])


def _hull_tol(hull):
    return HULL_TOL_REL * max(hull.bbox_diag, 1e-12)


def _dist_to_region(queries, solid, hull, witness_points):
    """Distance from each query to the solid-restricted-to-hull region.

    Queries are hull-interior points that tested outside the solid. The
    closest region point lies on the region's boundary: either on the
    solid's surface inside the hull (exact closest-point query, kept when
    it lands inside the hull) or on the hull's surface inside the solid
    (covered by the witness point set).
    """
    d_mesh, _, cp = solid.closest_surface_points(queries)
    ok = hull.contains(cp, tol=_hull_tol(hull))
    best = np.where(ok, d_mesh, np.inf)
    if len(witness_points):
        d_w, _ = cKDTree(witness_points).query(queries)
        best = np.minimum(best, d_w)
    return best


def concavity(hull, solid, patch=None, n_samples=20000, rng=None,
              metric="hausdorff"):
    """Concavity of one component against its convex hull.

    hull: ConvexHullMesh of the component. solid: the parent SolidMesh
    (defines the interior). patch: optional triangle soup of the
    component's own surface region; when omitted the component surface is
    taken to be the boundary of (solid intersect hull), which is the form
    used when re-evaluating exported hulls.

    Returns a ConcavityScore; metric="chamfer" swaps maxima for means.
    """
    if rng is None or not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    reduce_ = np.max if metric == "hausdorff" else np.mean
    tol = _hull_tol(hull)

    hull_surf = hull.sample_surface(n_samples, rng).positions
    if patch is not None:
        comp_surf = patch.sample_surface(n_samples, rng).positions
    else:
        # boundary of (solid intersect hull): solid surface kept inside the
        # hull, plus hull surface kept inside the solid
        mesh_pts = solid.sample_surface(n_samples, rng).positions
        parts = [mesh_pts[hull.contains(mesh_pts, tol=tol)],
                 hull_surf[solid.is_inside(hull_surf)]]
        parts = [p for p in parts if len(p)]
        # empty when the hull is disjoint from the solid; degenerate
        comp_surf = np.concatenate(parts) if parts else mesh_pts

    # surface term, both directions against exact geometry. Backward goes
    # to the boundary of (solid intersect hull): hull samples inside the
    # solid lie on that boundary themselves (e.g. on the planar seam where
    # a component was cut off), so they contribute zero.
    d_fwd, _, _ = hull.closest_surface_points(comp_surf)
    d_mesh, _, cp = solid.closest_surface_points(hull_surf)
    ok = hull.contains(cp, tol=tol)
    d_bwd = np.where(ok, d_mesh, np.inf)
    inside = solid.is_inside(hull_surf)
    d_bwd[inside] = 0.0
    bad = ~np.isfinite(d_bwd)
    if bad.any() and len(comp_surf):
        d_kd, _ = cKDTree(comp_surf).query(hull_surf[bad])
        d_bwd[bad] = d_kd
    surface_h = float(max(reduce_(d_fwd), reduce_(d_bwd)))

    # volume term: hull interior vs solid-restricted-to-hull interior.
    # Containment of the region in the hull makes one direction zero; the
    # other measures how far hull interior reaches outside the solid.
    vol_pts = uniform_in_hull(hull, n_samples, rng)
    inside = solid.is_inside(vol_pts)
    frac = float(inside.mean())
    rounds = 1
    while frac == 0.0 and rounds < EMPTY_INTERIOR_ROUNDS:
        extra = uniform_in_hull(hull, n_samples, rng)
        vol_pts = np.concatenate([vol_pts, extra])
        inside = np.concatenate([inside, solid.is_inside(extra)])
        frac = float(inside.mean())
        rounds += 1
    if frac == 0.0:
        return ConcavityScore(surface_h=surface_h, volume_h=0.0,
                              volume_fallback=True)

    outside = vol_pts[~inside]
    if len(outside) == 0:
        volume_h = 0.0
    else:
        witness = hull_surf[solid.is_inside(hull_surf)]
        if patch is not None:
            witness = np.concatenate(
                [witness, patch.sample_surface(min(n_samples, 4096),
                                               rng).positions]) \
                if len(witness) else patch.sample_surface(
                    min(n_samples, 4096), rng).positions
        d_out = _dist_to_region(outside, solid, hull, witness)
        if metric == "hausdorff":
            volume_h = float(d_out.max())
        else:
            # inside points contribute zero distance to the mean
            volume_h = float(d_out.sum() / len(vol_pts))
    return ConcavityScore(surface_h=surface_h, volume_h=volume_h)


def reconstruction_error(solid, hulls, n_samples=20000, rng=None):
    """Mean symmetric Chamfer between the input surface and the union
    boundary of the hulls.

    Input-side distances go to the nearest hull surface point that is not
    inside any other hull (exact closest-point queries with a sampled
    fallback for rare buried-minimum cases); union-side points are
    area-uniform per hull, rejected when inside another hull. "Inside"
    includes the other hull's boundary: where two hulls share a seam face,
    that face is interior to the union and must not count as boundary.
    """
    if rng is None or not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if not hulls:
        raise ValueError("need at least one hull")
    mesh_pts = solid.sample_surface(n_samples, rng).positions

    areas = np.array([h.area for h in hulls], dtype=np.float64)
    counts = np.maximum((n_samples * areas / areas.sum()).astype(int), 1)
    union_pts = []
    for i, h in enumerate(hulls):
        pts = h.sample_surface(int(counts[i]), rng).positions
        keep = np.ones(len(pts), dtype=bool)
        for j, other in enumerate(hulls):
            if j != i:
                keep &= ~other.contains(pts, tol=_hull_tol(other))
        union_pts.append(pts[keep])
    union_pts = np.concatenate([p for p in union_pts if len(p)])
    if len(union_pts) == 0:
        # fully mutually nested hulls; fall back to all surface points
        union_pts = np.concatenate(
            [h.sample_surface(int(counts[i]), rng).positions
             for i, h in enumerate(hulls)])

    # mesh -> union boundary
    best = np.full(len(mesh_pts), np.inf)
    for i, h in enumerate(hulls):
        d, _, cp = h.closest_surface_points(mesh_pts)
        valid = np.ones(len(cp), dtype=bool)
        for j, other in enumerate(hulls):
            if j != i:
                valid &= ~other.contains(cp, tol=_hull_tol(other))
        best = np.where(valid, np.minimum(best, d), best)
    buried = ~np.isfinite(best)
    if buried.any():
        d_kd, _ = cKDTree(union_pts).query(mesh_pts[buried])
        best[buried] = d_kd

    # union boundary -> mesh
    d_back, _, _ = solid.closest_surface_points(union_pts)
    return float(0.5 * (best.mean() + d_back.mean()))


def evaluate_decomposition(solid, hulls, patches=None, n_samples=20000,
                           seed=0, metric="hausdorff", threads=1):
    """Metrics dict for a finished decomposition.

    Per-hull concavity uses an independent per-hull RNG stream keyed by
    hull index, so thread count cannot change any value. patches, when
    given, carry each component's own surface soup (the actual split
    boundaries); without them concavity is measured against the solid
    restricted to each hull, which is all an exported hull set provides.
    """
    def one(i):
        r = stage_rng(seed, STAGE_METRICS, i)
        patch = patches[i] if patches is not None else None
        return concavity(hulls[i], solid, patch=patch, n_samples=n_samples,
                         rng=r, metric=metric)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            scores = list(ex.map(one, range(len(hulls))))
    else:
        scores = [one(i) for i in range(len(hulls))]
    recon = reconstruction_error(solid, hulls, n_samples=n_samples,
                                 rng=stage_rng(seed, STAGE_METRICS))
    return {
        "n_components": len(hulls),
        "max_concavity": max(s.value for s in scores),
        "mean_concavity": float(np.mean([s.value for s in scores])),
        "reconstruction_error": recon,
        "metric": metric,
        "n_metric_samples": n_samples,
        "per_hull": [s.to_dict() for s in scores],
    }

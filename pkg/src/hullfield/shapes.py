"""Procedural watertight test solids.

Everything here returns a SolidMesh. Axis-aligned solids (boxes, the L
prism, staircases) are built exactly from voxel occupancy grids; curved and
fused solids go through a signed-distance field and marching cubes.
"""

import numpy as np

from .errors import DegenerateGeometry
from .mesh import SolidMesh, weld_vertices


def _weld_round(tris, decimals=9):
    """Weld triangle soup vertices after rounding (grid-generated coords)."""
    verts = np.asarray(tris, dtype=np.float64).reshape(-1, 3)
    key = verts.round(decimals)
    uniq, idx, inv = np.unique(key, axis=0, return_index=True,
                               return_inverse=True)
    faces = inv.reshape(-1, 3)
    return verts[idx], faces


def _face_grid(origin, du, dv, nu, nv):
    """Triangles tiling the parallelogram origin + [0,1]du + [0,1]dv.

    Winding is chosen so normals point along du x dv.
    """
    origin = np.asarray(origin, dtype=np.float64)
    du = np.asarray(du, dtype=np.float64)
    dv = np.asarray(dv, dtype=np.float64)
    i = (np.arange(nu + 1) / nu)[:, None, None]
    j = (np.arange(nv + 1) / nv)[None, :, None]
    grid = origin + i * du + j * dv
    a = grid[:-1, :-1]
    b = grid[1:, :-1]
    c = grid[1:, 1:]
    d = grid[:-1, 1:]
    t1 = np.stack([a, b, c], axis=2).reshape(-1, 3, 3)
    t2 = np.stack([a, c, d], axis=2).reshape(-1, 3, 3)
    return np.concatenate([t1, t2])


def box(half=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), subdiv=2):
    half = np.asarray(half, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    eye = np.eye(3)
    tris = []
    for k in range(3):
        u = eye[(k + 1) % 3]
        v = eye[(k + 2) % 3]
        hu = half[(k + 1) % 3]
        hv = half[(k + 2) % 3]
        for s in (1.0, -1.0):
            uu, vv = (u, v) if s > 0 else (v, u)
            huu, hvv = (hu, hv) if s > 0 else (hv, hu)
            origin = center + s * half[k] * eye[k] - huu * uu - hvv * vv
            tris.append(_face_grid(origin, 2 * huu * uu, 2 * hvv * vv,
                                   subdiv, subdiv))
    verts, faces = _weld_round(np.concatenate(tris))
    return SolidMesh(verts, faces)


def voxel_surface(occ, origin=(0.0, 0.0, 0.0), spacing=1.0):
    """Boundary surface of a voxel occupancy grid as a SolidMesh.

    Corner coordinates are welded in integer grid space, so the result is
    exactly manifold whenever the occupancy is (no diagonal-only contacts).
    """
    occ = np.asarray(occ, dtype=bool)
    origin = np.asarray(origin, dtype=np.float64)
    quads = []  # integer corner quads, outward winding
    pad = np.pad(occ, 1)
    core = pad[1:-1, 1:-1, 1:-1]
    for axis in range(3):
        for sign in (1, -1):
            shifted = np.roll(pad, -sign, axis=axis)[1:-1, 1:-1, 1:-1]
            exposed = core & ~shifted
            cells = np.argwhere(exposed)
            if len(cells) == 0:
                continue
            base = cells.copy()
            if sign > 0:
                base[:, axis] += 1
            u = np.zeros(3, dtype=np.int64)
            v = np.zeros(3, dtype=np.int64)
            u[(axis + 1) % 3] = 1
            v[(axis + 2) % 3] = 1
            if sign < 0:
                u, v = v, u
            quad = np.stack([base, base + u, base + u + v, base + v], axis=1)
            quads.append(quad)
    if not quads:
        raise DegenerateGeometry("empty occupancy grid")
    quads = np.concatenate(quads)
    tris = np.concatenate([quads[:, [0, 1, 2]], quads[:, [0, 2, 3]]])
    corners = tris.reshape(-1, 3)
    uniq, inv = np.unique(corners, axis=0, return_inverse=True)
    faces = inv.reshape(-1, 3)
    verts = uniq.astype(np.float64) * spacing + origin
    return SolidMesh(verts, faces)


def el_prism(cell=0.125):
    """L-shaped prism: [0,2]x[0,1]x[0,1] union [0,1]x[0,2]x[0,1]."""
    n = int(round(1.0 / cell))
    occ = np.zeros((2 * n, 2 * n, n), dtype=bool)
    occ[:, :n, :] = True   # y in [0,1]
    occ[:n, :, :] = True   # x in [0,1]
    return voxel_surface(occ, spacing=cell)


def staircase(steps=11, depth=1.0):
    """Steps ascending along +x, extruded along y."""
    n = int(steps)
    ny = max(int(round(n * depth)), 1)
    occ = np.zeros((n, ny, n), dtype=bool)
    for i in range(n):
        occ[i, :, :i + 1] = True
    return voxel_surface(occ, spacing=1.0 / n)


def torus(R=0.65, r=0.3, nu=64, nv=32):
    iu = np.arange(nu)
    iv = np.arange(nv)
    theta = 2 * np.pi * iu / nu
    phi = 2 * np.pi * iv / nv
    ct, st = np.cos(theta)[:, None], np.sin(theta)[:, None]
    cp, sp = np.cos(phi)[None, :], np.sin(phi)[None, :]
    ring = R + r * cp
    verts = np.stack([ring * ct, ring * st,
                      np.broadcast_to(r * sp, (nu, nv))], axis=-1)
    verts = verts.reshape(-1, 3)
    idx = (iu[:, None] * nv + iv[None, :])
    i00 = idx
    i10 = np.roll(idx, -1, axis=0)
    i11 = np.roll(np.roll(idx, -1, axis=0), -1, axis=1)
    i01 = np.roll(idx, -1, axis=1)
    quads = np.stack([i00, i10, i11, i01], axis=-1).reshape(-1, 4)
    faces = np.concatenate([quads[:, [0, 1, 2]], quads[:, [0, 2, 3]]])
    return SolidMesh(verts, faces)


def star_prism(points=5, r_out=1.0, r_in=0.45, half_height=0.35):
    n = 2 * points
    ang = 2 * np.pi * np.arange(n) / n
    rad = np.where(np.arange(n) % 2 == 0, r_out, r_in)
    ring = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    bot = np.concatenate([ring, np.full((n, 1), -half_height)], axis=1)
    top = np.concatenate([ring, np.full((n, 1), half_height)], axis=1)
    verts = np.concatenate([bot, top,
                            [[0, 0, -half_height]], [[0, 0, half_height]]])
    bc, tc = 2 * n, 2 * n + 1
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces.append((i, j, n + j))
        faces.append((i, n + j, n + i))
        faces.append((bc, j, i))          # bottom cap, -z
        faces.append((tc, n + i, n + j))  # top cap, +z
    return SolidMesh(np.asarray(verts), np.asarray(faces))


def gear(teeth=11, r_out=1.0, r_in=0.62, half_height=0.25):
    """Star prism with many shallow teeth; decomposes into teeth + core."""
    return star_prism(points=teeth, r_out=r_out, r_in=r_in,
                      half_height=half_height)


def tetrahedron(scale=1.0):
    s = scale / np.sqrt(3.0)
    verts = np.asarray([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]],
                       dtype=np.float64) * s
    faces = np.asarray([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return SolidMesh(verts, faces)


def cylinder(radius=0.5, half_height=0.8, segments=48):
    n = segments
    ang = 2 * np.pi * np.arange(n) / n
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bot = np.concatenate([ring, np.full((n, 1), -half_height)], axis=1)
    top = np.concatenate([ring, np.full((n, 1), half_height)], axis=1)
    verts = np.concatenate([bot, top, [[0, 0, -half_height]],
                            [[0, 0, half_height]]])
    bc, tc = 2 * n, 2 * n + 1
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces.append((i, j, n + j))
        faces.append((i, n + j, n + i))
        faces.append((bc, j, i))
        faces.append((tc, n + i, n + j))
    return SolidMesh(np.asarray(verts), np.asarray(faces))


_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTS = np.asarray([
    [-1, _ICO_T, 0], [1, _ICO_T, 0], [-1, -_ICO_T, 0], [1, -_ICO_T, 0],
    [0, -1, _ICO_T], [0, 1, _ICO_T], [0, -1, -_ICO_T], [0, 1, -_ICO_T],
    [_ICO_T, 0, -1], [_ICO_T, 0, 1], [-_ICO_T, 0, -1], [-_ICO_T, 0, 1],
], dtype=np.float64)
_ICO_FACES = np.asarray([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def icosphere(subdiv=3, radius=1.0, center=(0.0, 0.0, 0.0)):
    verts = list(_ICO_VERTS / np.linalg.norm(_ICO_VERTS[0]))
    faces = [tuple(f) for f in _ICO_FACES]
    for _ in range(subdiv):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = 0.5 * (verts[i] + verts[j])
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc),
                          (ab, bc, ca)]
        faces = new_faces
    verts = np.asarray(verts) * radius + np.asarray(center)
    return SolidMesh(verts, np.asarray(faces))


def blob(subdiv=3, seed=7):
    """Star-shaped organic solid: icosphere with smooth radial lobes."""
    base = icosphere(subdiv=subdiv)
    verts = base.vertices.copy()
    unit = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    rng = np.random.default_rng(seed)
    n_lobes = 6
    centers = rng.standard_normal((n_lobes, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    amps = rng.uniform(-0.32, 0.42, n_lobes)
    sigmas = rng.uniform(0.3, 0.6, n_lobes)
    r = np.ones(len(verts))
    for c, a, s in zip(centers, amps, sigmas):
        d2 = ((unit - c) ** 2).sum(axis=1)
        r += a * np.exp(-d2 / (2 * s * s))
    r = np.clip(r, 0.55, 1.45)
    return SolidMesh(unit * r[:, None], base.faces)


def merge_solids(meshes):
    """Concatenate disjoint solids into one mesh (no geometric union)."""
    verts = []
    faces = []
    off = 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    return SolidMesh(np.concatenate(verts), np.concatenate(faces))


def flat_sheet():
    """Degenerate closed solid with zero volume (two coincident triangles)."""
    verts = np.asarray([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=np.float64)
    faces = np.asarray([[0, 1, 2], [0, 2, 1]])
    return SolidMesh(verts, faces)


# ---------------------------------------------------------------------------
# SDF-built composites (fused unions, smooth and watertight)


def _sdf_sphere(p, c, r):
    return np.linalg.norm(p - np.asarray(c), axis=1) - r


def _sdf_capsule(p, a, b, r):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(p - proj, axis=1) - r


def _sdf_torus(p, R, r):
    q = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2) - R
    return np.sqrt(q * q + p[:, 2] ** 2) - r


def sdf_mesh(sdf, lo=(-1.2, -1.2, -1.2), hi=(1.2, 1.2, 1.2), resolution=96):
    """Mesh the zero level set of an SDF callable over a box domain."""
    from skimage import measure

    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    n = int(resolution)
    axes = [np.linspace(lo[k], hi[k], n) for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    field = sdf(grid.reshape(-1, 3)).reshape(n, n, n)
    field = field + 1e-9  # keep grid nodes off the exact level set
    spacing = tuple((hi - lo) / (n - 1))
    verts, tris, _, _ = measure.marching_cubes(field, level=0.0,
                                               spacing=spacing)
    verts = verts.astype(np.float64) + lo
    verts, tris = weld_vertices(verts, tris.astype(np.int64))
    return SolidMesh(verts, tris)


def jack(resolution=88):
    """Three orthogonal bars with knobbed ends, like the toy jack."""
    bars = [(np.eye(3)[k] * 0.78, -np.eye(3)[k] * 0.78) for k in range(3)]

    def sdf(p):
        ds = [_sdf_sphere(p, (0, 0, 0), 0.3)]
        for a, b in bars:
            ds.append(_sdf_capsule(p, a, b, 0.17))
            ds.append(_sdf_sphere(p, a, 0.27))
            ds.append(_sdf_sphere(p, b, 0.27))
        return np.min(np.stack(ds), axis=0)

    return sdf_mesh(sdf, resolution=resolution)


def bead_chain(beads=6, resolution=96):
    """Zig-zag chain of beads joined by thin rods."""
    xs = np.linspace(-0.85, 0.85, beads)
    ys = 0.22 * np.where(np.arange(beads) % 2 == 0, 1.0, -1.0)
    centers = np.stack([xs, ys, np.zeros(beads)], axis=1)

    def sdf(p):
        ds = [_sdf_sphere(p, c, 0.21) for c in centers]
        for i in range(beads - 1):
            ds.append(_sdf_capsule(p, centers[i], centers[i + 1], 0.09))
        return np.min(np.stack(ds), axis=0)

    return sdf_mesh(sdf, lo=(-1.2, -0.6, -0.35), hi=(1.2, 0.6, 0.35),
                    resolution=resolution)


def crown(spikes=8, resolution=88):
    """Torus ring with radial spikes angled upward."""
    R, r = 0.62, 0.17
    ang = 2 * np.pi * np.arange(spikes) / spikes
    base = np.stack([R * np.cos(ang), R * np.sin(ang),
                     np.zeros(spikes)], axis=1)
    tip = np.stack([1.05 * np.cos(ang), 1.05 * np.sin(ang),
                    np.full(spikes, 0.5)], axis=1)

    def sdf(p):
        ds = [_sdf_torus(p, R, r)]
        for a, b in zip(base, tip):
            ds.append(_sdf_capsule(p, a, b, 0.11))
        return np.min(np.stack(ds), axis=0)

    return sdf_mesh(sdf, lo=(-1.25, -1.25, -0.5), hi=(1.25, 1.25, 0.85),
                    resolution=resolution)

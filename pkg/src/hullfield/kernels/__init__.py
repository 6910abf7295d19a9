"""Geometry query kernels: compiled BVH backend with a numpy fallback.

make_accel() returns an accelerator exposing four batched queries:

    closest(origins, dirs, t_min, t_max)  -> (t, face_id)
    any_hit(origins, dirs, t_min, t_max)  -> bool mask
    count_hits(origins, dirs, t_min, t_max) -> int counts
    closest_point(queries)                -> (distance, face_id, point)

Hit semantics: a triangle at parameter t counts iff t_min < t <= t_max, with
t in units of the direction vector (directions need not be unit length).
The compiled backend is used when the extension built; the brute backend is
always available and serves as the reference implementation in tests.
"""

import numpy as np

from . import bvh
from .brute import BruteAccel

try:
    from ._ray_ext import RayAccel as _RayAccel
    HAVE_COMPILED = True
except ImportError:  # extension not built; pure-python install
    _RayAccel = None
    HAVE_COMPILED = False

DEFAULT_BACKEND = "compiled" if HAVE_COMPILED else "brute"


def _prep_rays(origins, dirs, t_min, t_max):
    o = np.ascontiguousarray(origins, dtype=np.float64)
    d = np.ascontiguousarray(dirs, dtype=np.float64)
    if o.ndim != 2 or o.shape[1] != 3 or o.shape != d.shape:
        raise ValueError("origins and dirs must both have shape (n, 3)")
    n = len(o)
    tmin = np.ascontiguousarray(np.broadcast_to(np.asarray(t_min, np.float64), n))
    tmax = np.ascontiguousarray(np.broadcast_to(np.asarray(t_max, np.float64), n))
    return o, d, tmin, tmax


class CompiledAccel:
    """BVH built in numpy, traversed by the compiled extension."""

    backend = "compiled"

    def __init__(self, vertices, faces, leaf_size=4):
        tree = bvh.build(vertices, faces, leaf_size=leaf_size)
        self.n_tris = len(tree["tri_face"])
        self._accel = _RayAccel(tree["nmin"], tree["nmax"], tree["child"],
                                tree["count"], tree["v0"], tree["e1"],
                                tree["e2"], tree["tri_face"])

    def closest(self, origins, dirs, t_min, t_max):
        return self._accel.closest(*_prep_rays(origins, dirs, t_min, t_max))

    def any_hit(self, origins, dirs, t_min, t_max):
        return self._accel.any_hit(*_prep_rays(origins, dirs, t_min, t_max))

    def count_hits(self, origins, dirs, t_min, t_max):
        return self._accel.count_hits(*_prep_rays(origins, dirs, t_min, t_max))

    def closest_point(self, queries):
        q = np.ascontiguousarray(queries, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != 3:
            raise ValueError("queries must have shape (n, 3)")
        return self._accel.closest_point(q)


class FallbackAccel(BruteAccel):
    """All-triangle scan with the same query API as CompiledAccel."""

    backend = "brute"

    def closest(self, origins, dirs, t_min, t_max):
        return super().closest(*_prep_rays(origins, dirs, t_min, t_max))

    def any_hit(self, origins, dirs, t_min, t_max):
        return super().any_hit(*_prep_rays(origins, dirs, t_min, t_max))

    def count_hits(self, origins, dirs, t_min, t_max):
        return super().count_hits(*_prep_rays(origins, dirs, t_min, t_max))

    def closest_point(self, queries):
        q = np.ascontiguousarray(queries, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != 3:
            raise ValueError("queries must have shape (n, 3)")
        return super().closest_point(q)


def make_accel(vertices, faces, backend="auto"):
    if backend == "auto":
        backend = DEFAULT_BACKEND
    if backend == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernel extension is not available")
        return CompiledAccel(vertices, faces)
    if backend == "brute":
        return FallbackAccel(vertices, faces)
    raise ValueError(f"unknown kernel backend {backend!r}")

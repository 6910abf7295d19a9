# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray-cast and closest-point kernels over a flat-array BVH.

The brute-force fallback in brute.py implements the same arithmetic in the
same operation order, so both backends agree to floating-point precision on
non-degenerate queries. Hit semantics everywhere: a triangle at parameter t
counts iff t_min < t <= t_max, with t measured in units of the (possibly
non-unit) direction vector.
"""

import numpy as np

from libc.math cimport fabs, fmin, fmax, INFINITY

DEF STACK_CAP = 128

cdef double MT_EPS = 1e-13


cdef inline double _ray_tri(double ox, double oy, double oz,
                            double dx, double dy, double dz,
                            const double* v0, const double* e1,
                            const double* e2) nogil:
    """Moller-Trumbore. Returns the hit parameter t, or -inf on a miss."""
    cdef double px = dy * e2[2] - dz * e2[1]
    cdef double py = dz * e2[0] - dx * e2[2]
    cdef double pz = dx * e2[1] - dy * e2[0]
    cdef double det = e1[0] * px + e1[1] * py + e1[2] * pz
    if fabs(det) < MT_EPS:
        return -INFINITY
    cdef double inv = 1.0 / det
    cdef double tx = ox - v0[0]
    cdef double ty = oy - v0[1]
    cdef double tz = oz - v0[2]
    cdef double u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return -INFINITY
    cdef double qx = ty * e1[2] - tz * e1[1]
    cdef double qy = tz * e1[0] - tx * e1[2]
    cdef double qz = tx * e1[1] - ty * e1[0]
    cdef double v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return -INFINITY
    return (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv


cdef inline double _aabb_entry(const double* bmin, const double* bmax,
                               double ox, double oy, double oz,
                               double ix, double iy, double iz,
                               double t0, double t1) nogil:
    """Entry parameter of the ray into the box clipped to [t0, t1].

    Returns +inf when the clipped interval is empty. fmin/fmax absorb the
    NaNs produced by 0 * inf when an origin sits exactly on a slab plane.
    """
    cdef double ta = (bmin[0] - ox) * ix
    cdef double tb = (bmax[0] - ox) * ix
    t0 = fmax(t0, fmin(ta, tb))
    t1 = fmin(t1, fmax(ta, tb))
    ta = (bmin[1] - oy) * iy
    tb = (bmax[1] - oy) * iy
    t0 = fmax(t0, fmin(ta, tb))
    t1 = fmin(t1, fmax(ta, tb))
    ta = (bmin[2] - oz) * iz
    tb = (bmax[2] - oz) * iz
    t0 = fmax(t0, fmin(ta, tb))
    t1 = fmin(t1, fmax(ta, tb))
    if t0 <= t1:
        return t0
    return INFINITY


cdef inline double _pt_tri_d2(double qx, double qy, double qz,
                              const double* a, const double* ab,
                              const double* ac, double* out) nogil:
    """Squared distance from q to triangle (a, a+ab, a+ac); closest point in out."""
    cdef double apx = qx - a[0]
    cdef double apy = qy - a[1]
    cdef double apz = qz - a[2]
    cdef double d1 = ab[0] * apx + ab[1] * apy + ab[2] * apz
    cdef double d2 = ac[0] * apx + ac[1] * apy + ac[2] * apz
    cdef double bpx, bpy, bpz, d3, d4, cpx, cpy, cpz, d5, d6
    cdef double va, vb, vc, v, w, denom
    cdef double dx, dy, dz
    if d1 <= 0.0 and d2 <= 0.0:
        out[0] = a[0]
        out[1] = a[1]
        out[2] = a[2]
    else:
        bpx = apx - ab[0]
        bpy = apy - ab[1]
        bpz = apz - ab[2]
        d3 = ab[0] * bpx + ab[1] * bpy + ab[2] * bpz
        d4 = ac[0] * bpx + ac[1] * bpy + ac[2] * bpz
        if d3 >= 0.0 and d4 <= d3:
            out[0] = a[0] + ab[0]
            out[1] = a[1] + ab[1]
            out[2] = a[2] + ab[2]
        else:
            vc = d1 * d4 - d3 * d2
            if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                v = d1 / (d1 - d3)
                out[0] = a[0] + v * ab[0]
                out[1] = a[1] + v * ab[1]
                out[2] = a[2] + v * ab[2]
            else:
                cpx = apx - ac[0]
                cpy = apy - ac[1]
                cpz = apz - ac[2]
                d5 = ab[0] * cpx + ab[1] * cpy + ab[2] * cpz
                d6 = ac[0] * cpx + ac[1] * cpy + ac[2] * cpz
                if d6 >= 0.0 and d5 <= d6:
                    out[0] = a[0] + ac[0]
                    out[1] = a[1] + ac[1]
                    out[2] = a[2] + ac[2]
                else:
                    vb = d5 * d2 - d1 * d6
                    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                        w = d2 / (d2 - d6)
                        out[0] = a[0] + w * ac[0]
                        out[1] = a[1] + w * ac[1]
                        out[2] = a[2] + w * ac[2]
                    else:
                        va = d3 * d6 - d5 * d4
                        if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                            out[0] = (a[0] + ab[0]) + w * (ac[0] - ab[0])
                            out[1] = (a[1] + ab[1]) + w * (ac[1] - ab[1])
                            out[2] = (a[2] + ab[2]) + w * (ac[2] - ab[2])
                        else:
                            denom = 1.0 / (va + vb + vc)
                            v = vb * denom
                            w = vc * denom
                            out[0] = a[0] + ab[0] * v + ac[0] * w
                            out[1] = a[1] + ab[1] * v + ac[1] * w
                            out[2] = a[2] + ab[2] * v + ac[2] * w
    dx = qx - out[0]
    dy = qy - out[1]
    dz = qz - out[2]
    return dx * dx + dy * dy + dz * dz


cdef inline double _aabb_d2(const double* bmin, const double* bmax,
                            double qx, double qy, double qz) nogil:
    cdef double dx = fmax(fmax(bmin[0] - qx, 0.0), qx - bmax[0])
    cdef double dy = fmax(fmax(bmin[1] - qy, 0.0), qy - bmax[1])
    cdef double dz = fmax(fmax(bmin[2] - qz, 0.0), qz - bmax[2])
    return dx * dx + dy * dy + dz * dz


cdef class RayAccel:
    """BVH traversal over flat arrays produced by bvh.build."""

    cdef double[:, ::1] nmin, nmax, v0, e1, e2
    cdef int[::1] child, count, tri_face
    # keep references so the memoryview buffers stay alive
    cdef object _arrays

    def __init__(self, nmin, nmax, child, count, v0, e1, e2, tri_face):
        arrs = [np.ascontiguousarray(a, dtype=np.float64)
                for a in (nmin, nmax, v0, e1, e2)]
        ints = [np.ascontiguousarray(a, dtype=np.int32)
                for a in (child, count, tri_face)]
        self._arrays = (arrs, ints)
        self.nmin, self.nmax, self.v0, self.e1, self.e2 = arrs
        self.child, self.count, self.tri_face = ints

    cdef void _closest_one(self, double ox, double oy, double oz,
                           double dx, double dy, double dz,
                           double tmin, double tmax,
                           double* out_t, int* out_f) nogil:
        cdef int stack[STACK_CAP]
        cdef double entry[STACK_CAP]
        cdef int ns = 0
        cdef double ix = 1.0 / dx
        cdef double iy = 1.0 / dy
        cdef double iz = 1.0 / dz
        cdef double best_t = INFINITY
        cdef int best_f = -1
        cdef int node, left, i, s
        cdef double e, el, er, limit, t

        e = _aabb_entry(&self.nmin[0, 0], &self.nmax[0, 0],
                        ox, oy, oz, ix, iy, iz, tmin, tmax)
        if e < INFINITY:
            stack[0] = 0
            entry[0] = e
            ns = 1
        while ns > 0:
            ns -= 1
            node = stack[ns]
            if entry[ns] > fmin(tmax, best_t):
                continue
            if self.count[node] > 0:
                s = self.child[node]
                for i in range(s, s + self.count[node]):
                    t = _ray_tri(ox, oy, oz, dx, dy, dz,
                                 &self.v0[i, 0], &self.e1[i, 0], &self.e2[i, 0])
                    if t > tmin and t <= tmax and t < best_t:
                        best_t = t
                        best_f = self.tri_face[i]
            else:
                left = self.child[node]
                limit = fmin(tmax, best_t)
                el = _aabb_entry(&self.nmin[left, 0], &self.nmax[left, 0],
                                 ox, oy, oz, ix, iy, iz, tmin, limit)
                er = _aabb_entry(&self.nmin[left + 1, 0], &self.nmax[left + 1, 0],
                                 ox, oy, oz, ix, iy, iz, tmin, limit)
                if el <= er:
                    if er < INFINITY:
                        stack[ns] = left + 1
                        entry[ns] = er
                        ns += 1
                    if el < INFINITY:
                        stack[ns] = left
                        entry[ns] = el
                        ns += 1
                else:
                    if el < INFINITY:
                        stack[ns] = left
                        entry[ns] = el
                        ns += 1
                    if er < INFINITY:
                        stack[ns] = left + 1
                        entry[ns] = er
                        ns += 1
        out_t[0] = best_t if best_f >= 0 else INFINITY
        out_f[0] = best_f

    cdef bint _any_one(self, double ox, double oy, double oz,
                       double dx, double dy, double dz,
                       double tmin, double tmax) nogil:
        cdef int stack[STACK_CAP]
        cdef int ns = 1
        cdef double ix = 1.0 / dx
        cdef double iy = 1.0 / dy
        cdef double iz = 1.0 / dz
        cdef int node, left, i, s
        cdef double t
        stack[0] = 0
        while ns > 0:
            ns -= 1
            node = stack[ns]
            if _aabb_entry(&self.nmin[node, 0], &self.nmax[node, 0],
                           ox, oy, oz, ix, iy, iz, tmin, tmax) == INFINITY:
                continue
            if self.count[node] > 0:
                s = self.child[node]
                for i in range(s, s + self.count[node]):
                    t = _ray_tri(ox, oy, oz, dx, dy, dz,
                                 &self.v0[i, 0], &self.e1[i, 0], &self.e2[i, 0])
                    if t > tmin and t <= tmax:
                        return True
            else:
                left = self.child[node]
                stack[ns] = left
                ns += 1
                stack[ns] = left + 1
                ns += 1
        return False

    cdef int _count_one(self, double ox, double oy, double oz,
                        double dx, double dy, double dz,
                        double tmin, double tmax) nogil:
        cdef int stack[STACK_CAP]
        cdef int ns = 1
        cdef double ix = 1.0 / dx
        cdef double iy = 1.0 / dy
        cdef double iz = 1.0 / dz
        cdef int node, left, i, s
        cdef int hits = 0
        cdef double t
        stack[0] = 0
        while ns > 0:
            ns -= 1
            node = stack[ns]
            if _aabb_entry(&self.nmin[node, 0], &self.nmax[node, 0],
                           ox, oy, oz, ix, iy, iz, tmin, tmax) == INFINITY:
                continue
            if self.count[node] > 0:
                s = self.child[node]
                for i in range(s, s + self.count[node]):
                    t = _ray_tri(ox, oy, oz, dx, dy, dz,
                                 &self.v0[i, 0], &self.e1[i, 0], &self.e2[i, 0])
                    if t > tmin and t <= tmax:
                        hits += 1
            else:
                left = self.child[node]
                stack[ns] = left
                ns += 1
                stack[ns] = left + 1
                ns += 1
        return hits

    cdef void _closest_pt_one(self, double qx, double qy, double qz,
                              double* out_d2, int* out_f, double* out_p) nogil:
        cdef int stack[STACK_CAP]
        cdef double dist[STACK_CAP]
        cdef int ns = 0
        cdef double best = INFINITY
        cdef int best_f = -1
        cdef int node, left, i, s
        cdef double d2, dl, dr
        cdef double pt[3]

        d2 = _aabb_d2(&self.nmin[0, 0], &self.nmax[0, 0], qx, qy, qz)
        stack[0] = 0
        dist[0] = d2
        ns = 1
        while ns > 0:
            ns -= 1
            node = stack[ns]
            if dist[ns] >= best:
                continue
            if self.count[node] > 0:
                s = self.child[node]
                for i in range(s, s + self.count[node]):
                    d2 = _pt_tri_d2(qx, qy, qz, &self.v0[i, 0],
                                    &self.e1[i, 0], &self.e2[i, 0], pt)
                    if d2 < best:
                        best = d2
                        best_f = self.tri_face[i]
                        out_p[0] = pt[0]
                        out_p[1] = pt[1]
                        out_p[2] = pt[2]
            else:
                left = self.child[node]
                dl = _aabb_d2(&self.nmin[left, 0], &self.nmax[left, 0], qx, qy, qz)
                dr = _aabb_d2(&self.nmin[left + 1, 0], &self.nmax[left + 1, 0],
                              qx, qy, qz)
                if dl <= dr:
                    if dr < best:
                        stack[ns] = left + 1
                        dist[ns] = dr
                        ns += 1
                    if dl < best:
                        stack[ns] = left
                        dist[ns] = dl
                        ns += 1
                else:
                    if dl < best:
                        stack[ns] = left
                        dist[ns] = dl
                        ns += 1
                    if dr < best:
                        stack[ns] = left + 1
                        dist[ns] = dr
                        ns += 1
        out_d2[0] = best
        out_f[0] = best_f

    def closest(self, const double[:, ::1] o, const double[:, ::1] d,
                const double[::1] tmin, const double[::1] tmax):
        cdef Py_ssize_t b = o.shape[0], i
        t_out = np.empty(b, dtype=np.float64)
        f_out = np.empty(b, dtype=np.int32)
        cdef double[::1] tv = t_out
        cdef int[::1] fv = f_out
        with nogil:
            for i in range(b):
                self._closest_one(o[i, 0], o[i, 1], o[i, 2],
                                  d[i, 0], d[i, 1], d[i, 2],
                                  tmin[i], tmax[i], &tv[i], &fv[i])
        return t_out, f_out

    def any_hit(self, const double[:, ::1] o, const double[:, ::1] d,
                const double[::1] tmin, const double[::1] tmax):
        cdef Py_ssize_t b = o.shape[0], i
        out = np.empty(b, dtype=np.uint8)
        cdef unsigned char[::1] ov = out
        with nogil:
            for i in range(b):
                ov[i] = self._any_one(o[i, 0], o[i, 1], o[i, 2],
                                      d[i, 0], d[i, 1], d[i, 2],
                                      tmin[i], tmax[i])
        return out.view(bool)

    def count_hits(self, const double[:, ::1] o, const double[:, ::1] d,
                   const double[::1] tmin, const double[::1] tmax):
        cdef Py_ssize_t b = o.shape[0], i
        out = np.empty(b, dtype=np.int32)
        cdef int[::1] ov = out
        with nogil:
            for i in range(b):
                ov[i] = self._count_one(o[i, 0], o[i, 1], o[i, 2],
                                        d[i, 0], d[i, 1], d[i, 2],
                                        tmin[i], tmax[i])
        return out

    def closest_point(self, const double[:, ::1] q):
        cdef Py_ssize_t b = q.shape[0], i
        d_out = np.empty(b, dtype=np.float64)
        f_out = np.empty(b, dtype=np.int32)
        p_out = np.empty((b, 3), dtype=np.float64)
        cdef double[::1] dv = d_out
        cdef int[::1] fv = f_out
        cdef double[:, ::1] pv = p_out
        with nogil:
            for i in range(b):
                self._closest_pt_one(q[i, 0], q[i, 1], q[i, 2],
                                     &dv[i], &fv[i], &pv[i, 0])
        return np.sqrt(d_out), f_out, p_out

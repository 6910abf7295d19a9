"""Brute-force numpy fallback for the ray/closest-point kernels.

Implements the same queries as the compiled BVH backend by testing every
triangle, chunked over query batches to bound memory. The arithmetic mirrors
_ray_ext.pyx operation for operation so the two backends agree to floating
point precision; this module doubles as the reference oracle the accelerated
path is tested against.
"""

import numpy as np

MT_EPS = 1e-13


class BruteAccel:
    def __init__(self, vertices, faces):
        vertices = np.asarray(vertices, dtype=np.float64)
        faces = np.asarray(faces, dtype=np.int64)
        tri = vertices[faces]
        self.v0 = np.ascontiguousarray(tri[:, 0])
        self.e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
        self.e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])
        self.n_tris = len(faces)

    def _chunk(self, budget=1_500_000):
        return max(1, budget // max(self.n_tris, 1))

    def _mt(self, o, d):
        """Moller-Trumbore for a (b,3) ray block against all triangles.

        Returns (t, valid) of shape (b, m). Same operation order as the
        compiled kernel so results match bitwise on the accepted entries.
        """
        e1, e2, v0 = self.e1, self.e2, self.v0
        ox, oy, oz = o[:, 0:1], o[:, 1:2], o[:, 2:3]
        dx, dy, dz = d[:, 0:1], d[:, 1:2], d[:, 2:3]
        e1x, e1y, e1z = e1[None, :, 0], e1[None, :, 1], e1[None, :, 2]
        e2x, e2y, e2z = e2[None, :, 0], e2[None, :, 1], e2[None, :, 2]

        px = dy * e2z - dz * e2y
        py = dz * e2x - dx * e2z
        pz = dx * e2y - dy * e2x
        det = e1x * px
        det += e1y * py
        det += e1z * pz
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            tx = ox - v0[None, :, 0]
            ty = oy - v0[None, :, 1]
            tz = oz - v0[None, :, 2]
            u = tx * px
            u += ty * py
            u += tz * pz
            u *= inv
            qx = ty * e1z - tz * e1y
            qy = tz * e1x - tx * e1z
            qz = tx * e1y - ty * e1x
            v = dx * qx
            v += dy * qy
            v += dz * qz
            v *= inv
            t = e2x * qx
            t += e2y * qy
            t += e2z * qz
            t *= inv
            valid = (np.abs(det) >= MT_EPS) & (u >= 0.0) & (u <= 1.0)
            valid &= (v >= 0.0) & (u + v <= 1.0)
        return t, valid

    def closest(self, o, d, tmin, tmax):
        b = len(o)
        t_out = np.full(b, np.inf)
        f_out = np.full(b, -1, dtype=np.int32)
        step = self._chunk()
        for s in range(0, b, step):
            e = min(s + step, b)
            t, valid = self._mt(o[s:e], d[s:e])
            valid &= (t > tmin[s:e, None]) & (t <= tmax[s:e, None])
            tt = np.where(valid, t, np.inf)
            j = np.argmin(tt, axis=1)
            rows = np.arange(e - s)
            best = tt[rows, j]
            hit = np.isfinite(best)
            t_out[s:e] = np.where(hit, best, np.inf)
            f_out[s:e] = np.where(hit, j, -1).astype(np.int32)
        return t_out, f_out

    def any_hit(self, o, d, tmin, tmax):
        b = len(o)
        out = np.zeros(b, dtype=bool)
        step = self._chunk()
        for s in range(0, b, step):
            e = min(s + step, b)
            t, valid = self._mt(o[s:e], d[s:e])
            valid &= (t > tmin[s:e, None]) & (t <= tmax[s:e, None])
            out[s:e] = valid.any(axis=1)
        return out

    def count_hits(self, o, d, tmin, tmax):
        b = len(o)
        out = np.zeros(b, dtype=np.int32)
        step = self._chunk()
        for s in range(0, b, step):
            e = min(s + step, b)
            t, valid = self._mt(o[s:e], d[s:e])
            valid &= (t > tmin[s:e, None]) & (t <= tmax[s:e, None])
            out[s:e] = valid.sum(axis=1, dtype=np.int32)
        return out

    def closest_point(self, q):
        b = len(q)
        d_out = np.empty(b)
        f_out = np.empty(b, dtype=np.int32)
        p_out = np.empty((b, 3))
        step = max(1, self._chunk(600_000))
        for s in range(0, b, step):
            e = min(s + step, b)
            d2, pts = self._pt_tri(q[s:e])
            j = np.argmin(d2, axis=1)
            rows = np.arange(e - s)
            d_out[s:e] = np.sqrt(d2[rows, j])
            f_out[s:e] = j.astype(np.int32)
            p_out[s:e] = pts[rows, j]
        return d_out, f_out, p_out

    def _pt_tri(self, q):
        """Closest point on every triangle for a (b,3) query block.

        Vectorized form of the region walk in the compiled kernel (Ericson's
        closest-point-on-triangle), selecting the first matching region.
        """
        a = self.v0[None]
        ab = self.e1[None]
        ac = self.e2[None]
        ap = q[:, None, :] - a
        d1 = (ab * ap).sum(-1)
        d2_ = (ac * ap).sum(-1)
        bp = ap - ab
        d3 = (ab * bp).sum(-1)
        d4 = (ac * bp).sum(-1)
        cp = ap - ac
        d5 = (ab * cp).sum(-1)
        d6 = (ac * cp).sum(-1)
        vc = d1 * d4 - d3 * d2_
        vb = d5 * d2_ - d1 * d6
        va = d3 * d6 - d5 * d4

        with np.errstate(divide="ignore", invalid="ignore"):
            v3 = d1 / (d1 - d3)
            w5 = d2_ / (d2_ - d6)
            w6 = (d4 - d3) / ((d4 - d3) + (d5 - d6))
            denom = 1.0 / (va + vb + vc)
            v0_ = vb * denom
            w0 = vc * denom

            conds = [
                (d1 <= 0.0) & (d2_ <= 0.0),
                (d3 >= 0.0) & (d4 <= d3),
                (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0),
                (d6 >= 0.0) & (d5 <= d6),
                (vb <= 0.0) & (d2_ >= 0.0) & (d6 <= 0.0),
                (va <= 0.0) & ((d4 - d3) >= 0.0) & ((d5 - d6) >= 0.0),
            ]
            out = np.empty(ap.shape)
            for k in range(3):
                cands = [
                    a[..., k] + 0.0 * d1,
                    a[..., k] + ab[..., k],
                    a[..., k] + v3 * ab[..., k],
                    a[..., k] + ac[..., k],
                    a[..., k] + w5 * ac[..., k],
                    (a[..., k] + ab[..., k]) + w6 * (ac[..., k] - ab[..., k]),
                ]
                interior = a[..., k] + ab[..., k] * v0_ + ac[..., k] * w0
                out[..., k] = np.select(conds, cands, default=0.0)
                np.copyto(out[..., k], interior,
                          where=~np.logical_or.reduce(conds))
        diff = q[:, None, :] - out
        d2 = (diff * diff).sum(-1)
        return d2, out

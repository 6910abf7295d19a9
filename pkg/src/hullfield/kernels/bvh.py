"""Flat-array BVH construction.

The tree is built here in numpy and consumed by the compiled traversal
kernels. Internal nodes store the index of their left child (the right child
is always left+1); leaves store a [start, start+count) range into the
reordered triangle arrays. Median split on the widest centroid axis keeps the
tree balanced, so a fixed traversal stack of 128 entries is safe for any
realistic triangle count.
"""

import numpy as np


def build(vertices, faces, leaf_size=4):
    """Build a BVH over a triangle soup.

    Returns a dict of flat arrays: node bounds (nmin, nmax), per-node child
    index and triangle count, the reordered triangle representation
    (v0, e1, e2) and the map back to original face ids.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    m = len(faces)
    if m == 0:
        raise ValueError("cannot build a BVH over zero triangles")
    tri = vertices[faces]  # (m, 3, 3)
    tri_lo = tri.min(axis=1)
    tri_hi = tri.max(axis=1)
    cent = tri.mean(axis=1)

    order = np.arange(m, dtype=np.int64)
    nmin = [None]
    nmax = [None]
    child = [0]
    count = [0]
    work = [(0, m, 0)]
    while work:
        s, e, nid = work.pop()
        sl = order[s:e]
        nmin[nid] = tri_lo[sl].min(axis=0)
        nmax[nid] = tri_hi[sl].max(axis=0)
        n = e - s
        if n <= leaf_size:
            child[nid] = s
            count[nid] = n
            continue
        c = cent[sl]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        order[s:e] = sl[np.argsort(c[:, axis], kind="stable")]
        mid = (s + e) // 2
        left = len(nmin)
        nmin.extend((None, None))
        nmax.extend((None, None))
        child.extend((0, 0))
        count.extend((0, 0))
        child[nid] = left
        count[nid] = 0
        work.append((mid, e, left + 1))
        work.append((s, mid, left))

    v0 = np.ascontiguousarray(tri[order, 0])
    e1 = np.ascontiguousarray(tri[order, 1] - tri[order, 0])
    e2 = np.ascontiguousarray(tri[order, 2] - tri[order, 0])
    return {
        "nmin": np.ascontiguousarray(nmin, dtype=np.float64),
        "nmax": np.ascontiguousarray(nmax, dtype=np.float64),
        "child": np.ascontiguousarray(child, dtype=np.int32),
        "count": np.ascontiguousarray(count, dtype=np.int32),
        "v0": v0,
        "e1": e1,
        "e2": e2,
        "tri_face": np.ascontiguousarray(order, dtype=np.int32),
    }

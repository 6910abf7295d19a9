"""Geometric convexity labeling and contrastive triplet construction.

A pair of surface points is convex when the open segment between them stays
inside the solid: no transversal surface crossing strictly between the
endpoints, and the (inward-nudged) midpoint passes the containment test. The
midpoint check catches segments that run entirely outside a concavity and
therefore cross nothing; the inward nudge keeps pairs on a common flat face,
whose midpoint lies exactly on the surface, from flipping on parity noise.
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import OracleStarvation
from .mesh import SurfaceSamples
from .seeding import STAGE_TRIPLETS, stage_rng

# an anchor must find at least this many negatives to emit a triplet
MIN_VALID_NEGATIVES = 8
# candidate rounds per anchor when gathering negatives
NEGATIVE_ROUNDS = 8
# positives landing on the anchor's own face closer than this are resampled
OWN_FACE_REJECT = 1e-3


def _midpoints_nudged(pa, pb, na, nb, eps):
    mid = 0.5 * (pa + pb)
    if na is None or nb is None:
        return mid
    return mid - eps * (na + nb)


def is_convex_pairs(mesh, pos_a, pos_b, normal_a=None, normal_b=None):
    """Vectorized convex-pair test, symmetric in its arguments.

    Endpoints are swapped into lexicographic order first so (x, y) and
    (y, x) follow the identical numeric path.
    """
    pa = np.atleast_2d(np.asarray(pos_a, dtype=np.float64))
    pb = np.atleast_2d(np.asarray(pos_b, dtype=np.float64))
    na = None if normal_a is None else np.atleast_2d(normal_a)
    nb = None if normal_b is None else np.atleast_2d(normal_b)

    swap = ((pb[:, 0] < pa[:, 0])
            | ((pb[:, 0] == pa[:, 0])
               & ((pb[:, 1] < pa[:, 1])
                  | ((pb[:, 1] == pa[:, 1]) & (pb[:, 2] < pa[:, 2])))))
    if swap.any():
        pa, pb = np.where(swap[:, None], pb, pa), np.where(swap[:, None], pa, pb)
        if na is not None:
            na, nb = (np.where(swap[:, None], nb, na),
                      np.where(swap[:, None], na, nb))

    seg = pb - pa
    length = np.linalg.norm(seg, axis=1)
    eps = mesh.seg_eps
    tiny = length <= 2.0 * eps

    blocked = np.zeros(len(pa), dtype=bool)
    if (~tiny).any():
        idx = np.flatnonzero(~tiny)
        rel = eps / length[idx]
        blocked[idx] = mesh.any_hit(pa[idx], seg[idx], rel, 1.0 - rel)

    mid = _midpoints_nudged(pa, pb, na, nb, eps)
    inside = mesh.is_inside(mid)

    out = ~blocked & inside
    out[tiny] = True  # coincident-ish surface points are trivially convex
    return out


def is_convex_pair(mesh, a, b):
    """Single-pair convenience over SurfaceSample inputs (or bare points)."""
    na = getattr(a, "normal", None)
    nb = getattr(b, "normal", None)
    pa = getattr(a, "position", a)
    pb = getattr(b, "position", b)
    res = is_convex_pairs(mesh,
                          np.asarray(pa)[None], np.asarray(pb)[None],
                          None if na is None else np.asarray(na)[None],
                          None if nb is None else np.asarray(nb)[None])
    return bool(res[0])


def sample_positives(mesh, anchor_pos, anchor_normal, anchor_face, count,
                     rng, rounds=4):
    """Convex partners of an anchor: cast rays into the inward hemisphere
    and keep verified exit points.

    Returns a SurfaceSamples of at most `count` positives (possibly fewer
    for pathological anchors).
    """
    got_p, got_n, got_f = [], [], []
    need = count
    for _ in range(rounds):
        if need <= 0:
            break
        d = rng.standard_normal((need, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        inward = d @ anchor_normal
        d[inward > 0] *= -1.0
        # avoid grazing directions that hug the anchor's own face
        d = d[np.abs(inward) > 1e-3]
        if len(d) == 0:
            continue
        origins = np.broadcast_to(anchor_pos, d.shape)
        t, face, pts = mesh.cast_rays(origins, d, mesh.ray_eps, np.inf)
        ok = np.isfinite(t)
        own = (face == anchor_face) & (
            np.linalg.norm(pts - anchor_pos, axis=1) < OWN_FACE_REJECT)
        ok &= ~own
        if ok.any():
            pts, face = pts[ok], face[ok]
            anchors = np.broadcast_to(anchor_pos, pts.shape)
            anchor_n = np.broadcast_to(anchor_normal, pts.shape)
            convex = is_convex_pairs(mesh, anchors, pts, anchor_n,
                                     mesh.face_normals[face])
            pts, face = pts[convex], face[convex]
            got_p.append(pts)
            got_n.append(mesh.face_normals[face])
            got_f.append(face)
            need -= len(pts)
    if not got_p:
        return SurfaceSamples(np.zeros((0, 3)), np.zeros((0, 3)),
                              np.zeros(0, dtype=np.int32))
    return SurfaceSamples(np.concatenate(got_p)[:count],
                          np.concatenate(got_n)[:count],
                          np.concatenate(got_f)[:count].astype(np.int32))


def sample_negatives(mesh, anchor_pos, anchor_normal, pool, count, rng,
                     d_min=0.02, weighted=True, rounds=NEGATIVE_ROUNDS):
    """Non-convex partners of an anchor drawn from a sample pool.

    Weighted mode performs rejection sampling with acceptance w / w_max,
    w = 1 / max(d, d_min)^2, which biases selection toward nearby pool
    points just across a concavity. Returns unique pool indices.
    """
    n_pool = len(pool)
    chosen = []
    seen = np.zeros(n_pool, dtype=bool)
    for _ in range(rounds):
        if len(chosen) >= count:
            break
        cand = rng.integers(0, n_pool, size=max(2 * count, 256))
        if weighted:
            d = np.linalg.norm(pool.positions[cand] - anchor_pos, axis=1)
            w = 1.0 / np.maximum(d, d_min) ** 2
            keep = rng.random(len(cand)) < w * (d_min * d_min)  # w / w_max
            cand = cand[keep]
        cand = cand[~seen[cand]]
        cand = np.unique(cand)
        if len(cand) == 0:
            continue
        anchors = np.broadcast_to(anchor_pos, (len(cand), 3))
        anchor_n = np.broadcast_to(anchor_normal, (len(cand), 3))
        convex = is_convex_pairs(mesh, anchors, pool.positions[cand],
                                 anchor_n, pool.normals[cand])
        hits = cand[~convex]
        seen[cand] = True
        chosen.extend(hits.tolist())
    return np.asarray(chosen[:count], dtype=np.int64)


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negatives: np.ndarray


@dataclass
class TripletSet:
    """Anchors, positives and ragged negative lists over one sample table.

    All three index arrays point into `samples`, the shared surface pool
    (n_pool rows). Anchors appear in many triplets; positives are pool
    samples verified convex with their anchor.
    """

    samples: SurfaceSamples
    anchors: np.ndarray    # (t,) int64, indices into samples
    positives: np.ndarray  # (t,) int64
    negatives: np.ndarray  # (t, m) int64, -1 padded
    neg_counts: np.ndarray  # (t,) int64
    n_pool: int

    def __len__(self):
        return len(self.anchors)

    def __getitem__(self, i):
        c = self.neg_counts[i]
        return Triplet(int(self.anchors[i]), int(self.positives[i]),
                       self.negatives[i, :c].copy())


def _gather_negatives(mesh, pool, anchor_id, rng, cfg):
    """Valid (non-convex) pool partners for one anchor, with distances.

    Candidate rounds stop early when the first full round finds nothing,
    which keeps convex inputs cheap on the way to OracleStarvation.
    """
    n_pool = len(pool)
    a_pos = pool.positions[anchor_id]
    a_nrm = pool.normals[anchor_id]
    tested = np.zeros(n_pool, dtype=bool)
    tested[anchor_id] = True
    found = []
    round_size = max(cfg.n_neg_candidates, 256)
    for rnd in range(NEGATIVE_ROUNDS):
        if len(found) >= cfg.n_neg_candidates:
            break
        cand = np.unique(rng.integers(0, n_pool, size=round_size))
        cand = cand[~tested[cand]]
        if len(cand) == 0:
            continue
        anchors = np.broadcast_to(a_pos, (len(cand), 3))
        anchor_n = np.broadcast_to(a_nrm, (len(cand), 3))
        convex = is_convex_pairs(mesh, anchors, pool.positions[cand],
                                 anchor_n, pool.normals[cand])
        found.extend(cand[~convex].tolist())
        tested[cand] = True
        if rnd == 0 and not found:
            break  # barren anchor, almost surely a convex neighborhood
    ids = np.asarray(found[:cfg.n_neg_candidates], dtype=np.int64)
    d = np.linalg.norm(pool.positions[ids] - a_pos, axis=1) if len(ids) \
        else np.zeros(0)
    return ids, d


def build_triplets(mesh, pool, cfg):
    """Construct n_pos_per_anchor triplets per yielding anchor.

    Anchors are the first cfg.n_anchors pool rows (the pool itself is an
    area-uniform draw). Each anchor gathers non-convex candidates and casts
    hemisphere rays for positives. Positive exit points are snapped to the
    nearest pool sample and the snapped pair is re-verified: keeping every
    triplet endpoint inside the shared pool is what couples the feature
    rows. A free per-sample feature table has no smoothness prior tying
    nearby rows together, so two anchors only agree through samples they
    both constrain; fresh off-pool positives would leave each anchor
    solving its own isolated problem. Each triplet pairs one uniformly
    chosen snapped positive with its own hard/uniform negative draw.
    Raises OracleStarvation when fewer than 10% of anchors yield, which is
    the signature of (near-)convex input.
    """
    n_anchors = min(cfg.n_anchors, len(pool))
    tree = cKDTree(pool.positions)
    anchors, positives, neg_lists = [], [], []
    n_yield = 0

    for i in range(n_anchors):
        rng = stage_rng(cfg.seed, STAGE_TRIPLETS, i)
        valid, dist = _gather_negatives(mesh, pool, i, rng, cfg)
        if len(valid) < MIN_VALID_NEGATIVES:
            continue
        pos = sample_positives(mesh, pool.positions[i], pool.normals[i],
                               int(pool.face_ids[i]), cfg.n_pos_per_anchor,
                               rng)
        if len(pos) == 0:
            continue
        cand = np.unique(tree.query(pos.positions)[1])
        cand = cand[cand != i]
        if len(cand):
            a_pos = np.broadcast_to(pool.positions[i], (len(cand), 3))
            a_nrm = np.broadcast_to(pool.normals[i], (len(cand), 3))
            ok = is_convex_pairs(mesh, a_pos, pool.positions[cand],
                                 a_nrm, pool.normals[cand])
            cand = cand[ok]
        if len(cand) == 0:
            continue
        n_yield += 1

        n_neg = min(cfg.n_neg_per_triplet, len(valid))
        n_hard = int(round(cfg.hard_fraction * n_neg))
        w = 1.0 / np.maximum(dist, cfg.hard_min_dist) ** 2
        p_hard = w / w.sum()
        universe = np.arange(len(valid))
        for _ in range(cfg.n_pos_per_anchor):
            pick = int(rng.integers(0, len(cand)))
            hard_sel = rng.choice(len(valid), size=n_hard, replace=False,
                                  p=p_hard)
            rest = np.setdiff1d(universe, hard_sel, assume_unique=False)
            n_uni = min(n_neg - n_hard, len(rest))
            uni_sel = rng.choice(rest, size=n_uni, replace=False) if n_uni \
                else np.zeros(0, dtype=np.int64)
            negs = valid[np.concatenate([hard_sel, uni_sel]).astype(np.int64)]
            anchors.append(i)
            positives.append(int(cand[pick]))
            neg_lists.append(np.sort(negs).astype(np.int32))

    frac = n_yield / max(n_anchors, 1)
    if frac < 0.10:
        raise OracleStarvation(
            f"only {n_yield}/{n_anchors} anchors found non-convex "
            f"partners", yield_fraction=frac)

    t = len(anchors)
    m = max(len(n) for n in neg_lists)
    negatives = np.full((t, m), -1, dtype=np.int32)
    counts = np.zeros(t, dtype=np.int64)
    for j, n in enumerate(neg_lists):
        negatives[j, :len(n)] = n
        counts[j] = len(n)
    return TripletSet(samples=pool,
                      anchors=np.asarray(anchors, dtype=np.int64),
                      positives=np.asarray(positives, dtype=np.int64),
                      negatives=negatives,
                      neg_counts=counts,
                      n_pool=len(pool))


# ---------------------------------------------------------------------------
# binary dump

_TRIP_MAGIC = b"HFTRIP01"


def dump_triplets(path, ts):
    """Versioned binary dump: header, float32 sample table, index arrays."""
    with open(path, "wb") as fh:
        fh.write(_TRIP_MAGIC)
        fh.write(struct.pack("<4q", len(ts.samples), len(ts),
                             ts.negatives.shape[1], ts.n_pool))
        fh.write(ts.samples.positions.astype("<f4").tobytes())
        fh.write(ts.samples.normals.astype("<f4").tobytes())
        fh.write(ts.samples.face_ids.astype("<i4").tobytes())
        fh.write(ts.anchors.astype("<i8").tobytes())
        fh.write(ts.positives.astype("<i8").tobytes())
        fh.write(ts.negatives.astype("<i4").tobytes())
        fh.write(ts.neg_counts.astype("<i8").tobytes())


def load_triplets(path):
    from .errors import ParseError
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _TRIP_MAGIC:
            raise ParseError(f"{path}: not a triplet dump (magic {magic!r})")
        n, t, m, n_pool = struct.unpack("<4q", fh.read(32))

        def arr(dtype, count, shape):
            raw = np.frombuffer(fh.read(np.dtype(dtype).itemsize * count),
                                dtype=dtype)
            if len(raw) != count:
                raise ParseError(f"{path}: truncated triplet dump")
            return raw.reshape(shape)

        pos = arr("<f4", n * 3, (n, 3)).astype(np.float64)
        nrm = arr("<f4", n * 3, (n, 3)).astype(np.float64)
        fid = arr("<i4", n, (n,)).astype(np.int32)
        anchors = arr("<i8", t, (t,)).astype(np.int64)
        positives = arr("<i8", t, (t,)).astype(np.int64)
        negatives = arr("<i4", t * m, (t, m)).astype(np.int32)
        counts = arr("<i8", t, (t,)).astype(np.int64)
    return TripletSet(SurfaceSamples(pos, nrm, fid), anchors, positives,
                      negatives, counts, int(n_pool))

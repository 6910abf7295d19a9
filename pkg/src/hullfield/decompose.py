"""Feature-driven recursive convex decomposition.

The entry point is a max-heap loop over component concavity: pop the worst
component, accept it if it is within threshold, otherwise split it in two by
clustering the learned per-sample features and re-score the children. Mesh
mode clusters per-face features and completes the noisy cluster boundary
with a minimum s-t cut over the face dual graph, so the final seam is the
shortest curve separating the two feature cores. Pointcloud mode runs plain
2-means on a blended feature/Euclidean metric.

Termination is guaranteed by three guards on top of the basic loop: a
component that cannot be split is accepted with an "indivisible" flag, a
lineage that fails to reduce concavity by at least 1% for three consecutive
generations is accepted as "stalled", and once the hull budget is committed
the remaining heap drains into "cap"-flagged leaves. Every leaf therefore
either meets the threshold or carries a flag, and the leaves always cover
the whole input.
"""

import heapq
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_flow

from .errors import Indivisible
from .hulls import robust_hull
from .metrics import concavity as score_concavity
from .metrics import evaluate_decomposition
from .oracle import TripletSet
from .seeding import STAGE_DECOMP, stage_rng

# Integer capacity scale for min-cut edge weights (edge length / bbox diag).
CUT_SCALE = 2 ** 20
# Terminal-arc capacity; larger than any possible sum of boundary edges.
PIN_CAPACITY = 2 ** 28
# Fraction of the least feature-decisive pushed faces left unpinned so the
# cut, not the clustering noise, decides the transition band.
PIN_FREE_QUANTILE = 0.2
# Evidence threshold: a face is "pushed" if its samples appear in triplets
# (as anchor or negative) at least this often on average.
PUSH_MIN = 1.0
MIN_PROGRESS = 0.01      # relative concavity drop that counts as progress
STALL_GENERATIONS = 3    # no-progress generations before a lineage stops


@dataclass
class Component:
    """One node of the decomposition tree.

    sample_ids indexes the shared surface-sample table; face_ids indexes
    the solid's faces (mesh mode only, None in pointcloud mode). stall
    counts consecutive no-progress generations along this node's lineage.
    """

    sample_ids: np.ndarray
    face_ids: "np.ndarray | None"
    hull: object = None
    concavity: object = None
    parent: "int | None" = None
    path: tuple = ()
    flags: tuple = ()
    children: tuple = ()
    stall: int = 0

    @property
    def is_leaf(self):
        return not self.children

    def to_record(self):
        return {
            "path": list(self.path),
            "parent": self.parent,
            "children": list(self.children),
            "n_samples": int(len(self.sample_ids)),
            "n_faces": None if self.face_ids is None else
                       int(len(self.face_ids)),
            "concavity": None if self.concavity is None else
                         self.concavity.to_dict(),
            "flags": list(self.flags),
        }


@dataclass
class Decomposition:
    """Full output of one recursive run: leaves, lineage and a metrics dict.

    Invariants: every leaf has concavity.value < epsilon or a non-empty
    flags tuple, len(leaves) <= max_hulls, and leaf sample_ids partition
    the sample table.
    """

    leaves: list
    tree: list
    epsilon: float
    max_hulls: int
    metrics: "dict | None" = None
    stats: dict = field(default_factory=dict)

    @property
    def hulls(self):
        return [leaf.hull for leaf in self.leaves]

    def leaf_flags(self):
        return [leaf.flags for leaf in self.leaves]

    def tree_records(self):
        return [c.to_record() for c in self.tree]


def face_adjacency_lengths(solid):
    """Adjacent face pairs of a closed mesh with shared-edge lengths.

    Returns (pairs, lengths): pairs is (m, 2) int64 with each undirected
    adjacency once, lengths the Euclidean length of the shared edge.
    """
    f = solid.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    owner = np.tile(np.arange(len(f), dtype=np.int64), 3)
    keys = edges[:, 0].astype(np.int64) * len(solid.vertices) + edges[:, 1]
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    owner = owner[order]
    edges = edges[order]
    # closed manifold: every undirected edge appears exactly twice
    pairs = np.stack([owner[0::2], owner[1::2]], axis=1)
    ev = edges[0::2]
    lengths = np.linalg.norm(
        solid.vertices[ev[:, 0]] - solid.vertices[ev[:, 1]], axis=1)
    return pairs, lengths


class FieldContext:
    """Per-shape tables shared by every split of one decomposition run.

    Mesh mode precomputes unit per-face features (mean of the samples on
    each face, nearest-by-adjacency inherited where a face drew no
    samples), per-face push evidence (how often the face's samples were
    used as triplet anchors or negatives), and the face dual graph with
    shared-edge lengths. Pointcloud mode only needs positions + features.
    """

    def __init__(self, solid, samples, features, mode="mesh",
                 push_counts=None):
        self.solid = solid
        self.samples = samples
        self.features = np.asarray(features, dtype=np.float64)
        self.mode = mode
        self.diag = solid.bbox_diag
        if mode == "mesh":
            self._build_face_tables(push_counts)

    def _build_face_tables(self, push_counts):
        solid, fid = self.solid, self.samples.face_ids
        nf = len(solid.faces)
        k = self.features.shape[1]
        fsum = np.zeros((nf, k))
        cnt = np.zeros(nf)
        np.add.at(fsum, fid, self.features)
        np.add.at(cnt, fid, 1.0)
        push = np.zeros(nf)
        if push_counts is not None:
            np.add.at(push, fid, push_counts)
        push /= np.maximum(cnt, 1.0)

        have = cnt > 0
        feats = np.zeros_like(fsum)
        feats[have] = fsum[have] / cnt[have, None]

        self.adj_pairs, self.adj_lengths = face_adjacency_lengths(solid)
        neighbors = [[] for _ in range(nf)]
        for (a, b) in self.adj_pairs:
            neighbors[a].append(int(b))
            neighbors[b].append(int(a))
        self.face_neighbors = neighbors

        # sampleless faces inherit the nearest sampled face's feature
        queue = deque(np.flatnonzero(have).tolist())
        seen = have.copy()
        while queue:
            u = queue.popleft()
            for v in neighbors[u]:
                if not seen[v]:
                    seen[v] = True
                    feats[v] = feats[u]
                    queue.append(v)
        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        self.face_feats = feats / np.maximum(norms, 1e-12)
        self.face_push = push
        self.samples_of_face = fid


def build_field_context(solid, triplets, fs, mode="mesh"):
    """Bundle a solid, its triplet evidence and fitted features for splits."""
    push = None
    if mode == "mesh" and isinstance(triplets, TripletSet):
        push = np.zeros(triplets.n_pool)
        np.add.at(push, triplets.anchors, 1.0)
        negs = triplets.negatives[triplets.negatives >= 0]
        np.add.at(push, negs, 1.0)
    samples = triplets.samples if isinstance(triplets, TripletSet) else \
        triplets
    return FieldContext(solid, samples, fs.features, mode=mode,
                        push_counts=push)


def _two_means_sphere(feats, max_iter=100):
    """Spherical 2-means labels with a deterministic PCA-sign init."""
    x = feats - feats.mean(axis=0)
    cov = x.T @ x / max(len(feats), 1)
    _, evecs = np.linalg.eigh(cov)
    lab = (x @ evecs[:, -1] > 0).astype(np.int64)
    if lab.min() == lab.max():
        return lab, None
    for _ in range(max_iter):
        c0 = feats[lab == 0].mean(axis=0)
        c1 = feats[lab == 1].mean(axis=0)
        c0 /= max(np.linalg.norm(c0), 1e-12)
        c1 /= max(np.linalg.norm(c1), 1e-12)
        new = (feats @ c1 > feats @ c0).astype(np.int64)
        if new.min() == new.max():   # keep both clusters populated
            break
        if np.array_equal(new, lab):
            lab = new
            break
        lab = new
    c0 = feats[lab == 0].mean(axis=0)
    c1 = feats[lab == 1].mean(axis=0)
    c0 /= max(np.linalg.norm(c0), 1e-12)
    c1 /= max(np.linalg.norm(c1), 1e-12)
    return lab, feats @ (c0 - c1)


def _min_cut_labels(n, edges, lengths, pin_mask, pin_label, diag):
    """Binary face labels from a pinned min s-t cut over the dual graph.

    edges: (m, 2) local face pairs; lengths: shared-edge lengths. Pinned
    faces are wired to the terminals with effectively infinite capacity;
    every other face is free, so the cut traces the shortest boundary
    separating the two pinned cores. Returns int labels, 0 = source side.
    """
    src, snk = n, n + 1
    cap = np.maximum(
        1, np.rint(lengths / diag * CUT_SCALE).astype(np.int64))
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    caps = np.concatenate([cap, cap])
    pins = np.flatnonzero(pin_mask)
    side0 = pins[pin_label[pins] == 0]
    side1 = pins[pin_label[pins] == 1]
    rows = np.concatenate([rows, np.full(len(side0), src), side1])
    cols = np.concatenate([cols, side0, np.full(len(side1), snk)])
    caps = np.concatenate(
        [caps, np.full(len(side0) + len(side1), PIN_CAPACITY)])
    g = csr_matrix((caps.astype(np.int32), (rows, cols)),
                   shape=(n + 2, n + 2))
    res = maximum_flow(g, src, snk)
    resid = g - res.flow
    resid.data = np.maximum(resid.data, 0)
    reach = np.zeros(n + 2, dtype=bool)
    reach[src] = True
    queue = deque([src])
    indptr, indices, data = resid.indptr, resid.indices, resid.data
    while queue:
        u = queue.popleft()
        for ei in range(indptr[u], indptr[u + 1]):
            v = indices[ei]
            if data[ei] > 0 and not reach[v]:
                reach[v] = True
                queue.append(v)
    return (~reach[:n]).astype(np.int64)


def _connected_components(n, neighbor_lists, member_mask):
    """Connected components of the subgraph induced by member_mask."""
    comp = np.full(n, -1, dtype=np.int64)
    nc = 0
    for s in range(n):
        if not member_mask[s] or comp[s] >= 0:
            continue
        queue = deque([s])
        comp[s] = nc
        while queue:
            u = queue.popleft()
            for v in neighbor_lists[u]:
                if member_mask[v] and comp[v] < 0:
                    comp[v] = nc
                    queue.append(v)
        nc += 1
    return comp, nc


def _repair_connectivity(lab, neighbor_lists):
    """Flip every non-largest connected piece of each label to the other.

    Repeats until stable so a flip that fragments the other side is also
    cleaned up; with two labels this terminates because the largest piece
    only ever grows.
    """
    n = len(lab)
    for _ in range(n):
        changed = False
        for side in (0, 1):
            mask = lab == side
            if not mask.any():
                continue
            comp, nc = _connected_components(n, neighbor_lists, mask)
            if nc <= 1:
                continue
            sizes = np.bincount(comp[mask], minlength=nc)
            keep = int(np.argmax(sizes))
            flip = mask & (comp != keep)
            lab[flip] = 1 - side
            changed = True
        if not changed:
            break
    return lab


def _balanced_bfs_labels(n, neighbor_lists):
    """Deterministic two-region growth used when features carry no signal.

    Seeds at face 0 and the BFS-farthest face from it, then grows both
    regions in lockstep over the adjacency graph.
    """
    dist = np.full(n, -1, dtype=np.int64)
    dist[0] = 0
    queue = deque([0])
    far = 0
    while queue:
        u = queue.popleft()
        far = u
        for v in neighbor_lists[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    lab = np.full(n, -1, dtype=np.int64)
    queues = (deque([0]), deque([far]))
    lab[0] = 0
    if far != 0:
        lab[far] = 1
    while queues[0] or queues[1]:
        for side in (0, 1):
            if not queues[side]:
                continue
            u = queues[side].popleft()
            for v in neighbor_lists[u]:
                if lab[v] < 0:
                    lab[v] = side
                    queues[side].append(v)
    lab[lab < 0] = 0
    if (lab == 1).sum() == 0:   # disconnected or 1-face corner cases
        lab[n - 1] = 1
    return lab


def _component_hull(ctx, sample_ids, face_ids):
    if ctx.mode == "mesh":
        verts = ctx.solid.vertices[np.unique(ctx.solid.faces[face_ids])]
    else:
        verts = ctx.samples.positions[sample_ids]
    return robust_hull(verts, backend=getattr(ctx.solid, "backend", "auto"))


def _split_mesh(component, ctx, rng):
    faces = np.asarray(component.face_ids)
    if len(faces) < 2:
        raise Indivisible("component has a single face")
    local = {int(f): i for i, f in enumerate(faces)}
    n = len(faces)
    neighbor_lists = [[] for _ in range(n)]
    edges = []
    lengths = []
    for (a, b), length in zip(ctx.adj_pairs, ctx.adj_lengths):
        ia = local.get(int(a))
        ib = local.get(int(b))
        if ia is None or ib is None:
            continue
        neighbor_lists[ia].append(ib)
        neighbor_lists[ib].append(ia)
        edges.append((ia, ib))
        lengths.append(length)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    lengths = np.asarray(lengths, dtype=np.float64)

    feats = ctx.face_feats[faces]
    spread = np.abs(feats - feats[0]).max() if len(feats) else 0.0
    if spread < 1e-9:
        if n == 1:
            raise Indivisible("identical features on a single face")
        lab = _balanced_bfs_labels(n, neighbor_lists)
    else:
        lab2, margin = _two_means_sphere(feats)
        if margin is None:
            lab = _balanced_bfs_labels(n, neighbor_lists)
        else:
            lab2 = (margin < 0).astype(np.int64)
            if lab2.min() == lab2.max():
                lab = _balanced_bfs_labels(n, neighbor_lists)
            else:
                absm = np.abs(margin)
                pushed = ctx.face_push[faces] >= PUSH_MIN
                base = absm[pushed] if pushed.sum() >= 16 else absm
                thr = np.quantile(base, PIN_FREE_QUANTILE)
                pin = absm >= thr
                if pushed.sum() >= 16:
                    pin &= pushed
                two_sided = pin.any() and lab2[pin].min() != lab2[pin].max()
                if two_sided and len(edges):
                    lab = _min_cut_labels(n, edges, lengths, pin, lab2,
                                          ctx.diag)
                else:
                    lab = lab2
                lab = _repair_connectivity(lab, neighbor_lists)
    if lab.min() == lab.max():
        raise Indivisible("no nontrivial cut found")

    sample_faces = ctx.samples_of_face[component.sample_ids]
    face_side = np.zeros(len(ctx.solid.faces), dtype=np.int64)
    face_side[faces] = lab
    side = face_side[sample_faces]
    out = []
    for s in (0, 1):
        out.append(Component(
            sample_ids=component.sample_ids[side == s],
            face_ids=faces[lab == s],
        ))
    return out[0], out[1]


def _split_pointcloud(component, ctx, blend_weight, rng):
    ids = np.asarray(component.sample_ids)
    if len(ids) < 2:
        raise Indivisible("component has fewer than 2 samples")
    feats = ctx.features[ids]
    pos = ctx.samples.positions[ids]
    diag = float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0)))
    if diag <= 0 and np.abs(feats - feats[0]).max() < 1e-9:
        raise Indivisible("coincident samples with identical features")
    if len(ids) == 2:
        return (Component(sample_ids=ids[:1], face_ids=None),
                Component(sample_ids=ids[1:], face_ids=None))

    w = float(blend_weight)
    diag = max(diag, 1e-12)
    x = feats - feats.mean(axis=0)
    cov = x.T @ x / len(ids)
    _, evecs = np.linalg.eigh(cov)
    lab = (x @ evecs[:, -1] > 0).astype(np.int64)
    if lab.min() == lab.max():
        px = pos - pos.mean(axis=0)
        _, pvecs = np.linalg.eigh(px.T @ px / len(ids))
        lab = (px @ pvecs[:, -1] > 0).astype(np.int64)
    if lab.min() == lab.max():
        lab[: len(ids) // 2] = 1 - lab[0]

    def dists(cf, cp):
        cf = cf / max(np.linalg.norm(cf), 1e-12)
        d_feat = (1.0 - feats @ cf) / 2.0
        d_pos = np.linalg.norm(pos - cp, axis=1) / diag
        return (1.0 - w) * d_feat + w * d_pos

    for _ in range(100):
        d0 = dists(feats[lab == 0].mean(axis=0), pos[lab == 0].mean(axis=0))
        d1 = dists(feats[lab == 1].mean(axis=0), pos[lab == 1].mean(axis=0))
        new = (d1 < d0).astype(np.int64)
        if new.min() == new.max():
            # keep both sides populated: hand the side its best candidate
            empty = 1 - int(new[0])
            gain = d0 - d1 if empty == 1 else d1 - d0
            new[int(np.argmax(gain))] = empty
        if np.array_equal(new, lab):
            break
        lab = new
    return (Component(sample_ids=ids[lab == 0], face_ids=None),
            Component(sample_ids=ids[lab == 1], face_ids=None))


def binary_split(component, ctx, mode=None, blend_weight=0.15, rng=None):
    """Split one component in two along the feature field.

    Mesh mode: spherical 2-means on per-face features, margin-filtered
    push-evidence pins, then a min s-t cut over the component's face dual
    graph completes the boundary; non-largest connected pieces are flipped
    so both children are connected where the input allows it. Pointcloud
    mode: 2-means under d = (1-w)*(1-cos)/2 + w*|dp|/D. Raises Indivisible
    when no two-sided split exists. Children carry sample and face ids
    only; the caller scores hulls and concavity.
    """
    mode = mode or ctx.mode
    if rng is None:
        rng = np.random.default_rng(0)
    if mode == "mesh":
        return _split_mesh(component, ctx, rng)
    return _split_pointcloud(component, ctx, blend_weight, rng)


def _score(ctx, component, seed, metric, n_samples):
    component.hull = _component_hull(ctx, component.sample_ids,
                                     component.face_ids)
    patch = None
    if ctx.mode == "mesh":
        patch = ctx.solid.submesh_soup(component.face_ids)
    rng = stage_rng(seed, STAGE_DECOMP, *component.path)
    component.concavity = score_concavity(
        component.hull, ctx.solid, patch=patch, n_samples=n_samples,
        rng=rng, metric=metric)
    return component


def recursive_decompose(solid, ctx, epsilon, max_hulls, mode=None, seed=0,
                        metric="hausdorff", n_metric_samples=20000,
                        blend_weight=0.15, evaluate=True, threads=1):
    """Concavity-ordered recursive bisection of a solid.

    Max-heap loop: pop the worst component; accept it when its concavity
    is below epsilon, otherwise split and push both children (first child
    first). Splitting is only allowed while the committed component count
    (accepted + still queued + 1 for the extra child) stays within
    max_hulls; after that the heap drains into "cap"-flagged leaves.
    Indivisible components and stalled lineages (three consecutive
    generations improving concavity by less than 1%) are accepted with
    flags, which guarantees termination.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if max_hulls < 1:
        raise ValueError("max_hulls must be at least 1")
    mode = mode or ctx.mode

    n_samples_total = len(ctx.samples)
    root = Component(
        sample_ids=np.arange(n_samples_total, dtype=np.int64),
        face_ids=(np.arange(len(solid.faces), dtype=np.int64)
                  if mode == "mesh" else None),
        path=(),
    )
    _score(ctx, root, seed, metric, n_metric_samples)
    tree = [root]
    heap = [(-root.concavity.value, 0, 0)]
    counter = 1
    accepted = []
    pops = []
    events = []

    def accept(cid, flag=None):
        comp = tree[cid]
        if flag:
            comp.flags = comp.flags + (flag,)
        accepted.append(cid)
        events.append({"event": "accept", "id": cid,
                       "concavity": comp.concavity.value,
                       "flags": list(comp.flags)})

    while heap:
        negval, _, cid = heapq.heappop(heap)
        comp = tree[cid]
        pops.append((cid, -negval))
        if comp.concavity.value < epsilon:
            accept(cid)
            continue
        if comp.stall >= STALL_GENERATIONS:
            accept(cid, "stalled")
            continue
        committed = len(accepted) + len(heap) + 1
        if committed + 1 > max_hulls:
            accept(cid, "cap")
            continue
        try:
            child_a, child_b = binary_split(
                comp, ctx, mode=mode, blend_weight=blend_weight,
                rng=stage_rng(seed, STAGE_DECOMP, *comp.path, 1))
        except Indivisible as exc:
            events.append({"event": "indivisible", "id": cid,
                           "reason": str(exc)})
            accept(cid, "indivisible")
            continue
        kids = []
        for slot, child in enumerate((child_a, child_b)):
            child.parent = cid
            child.path = comp.path + (slot,)
            _score(ctx, child, seed, metric, n_metric_samples)
            kids.append(child)
        drop = comp.concavity.value - max(k.concavity.value for k in kids)
        stalled_gen = drop < MIN_PROGRESS * comp.concavity.value
        for child in kids:
            child.stall = comp.stall + 1 if stalled_gen else 0
            tree.append(child)
            child_id = len(tree) - 1
            heapq.heappush(heap,
                           (-child.concavity.value, counter, child_id))
            counter += 1
        comp.children = (len(tree) - 2, len(tree) - 1)
        events.append({
            "event": "split", "id": cid,
            "children": list(comp.children),
            "child_concavities": [k.concavity.value for k in kids],
            "no_progress": bool(stalled_gen),
        })

    leaves = [tree[cid] for cid in accepted]
    dec = Decomposition(
        leaves=leaves, tree=tree, epsilon=float(epsilon),
        max_hulls=int(max_hulls),
        stats={"pops": pops, "events": events, "n_splits": sum(
            1 for e in events if e["event"] == "split")},
    )
    if evaluate:
        # exported-hull form (no patches): re-evaluating the written hull
        # files against the input reproduces these numbers exactly
        dec.metrics = evaluate_decomposition(
            solid, dec.hulls, patches=None, n_samples=n_metric_samples,
            seed=seed, metric=metric, threads=threads)
    return dec


def granularity_sweep(solid, ctx, epsilons, max_hulls, mode=None, seed=0,
                      metric="hausdorff", n_metric_samples=20000,
                      blend_weight=0.15, threads=1):
    """One Decomposition per threshold, reusing the same feature field.

    Thresholds run from coarse to fine (sorted descending), so component
    counts are non-decreasing along the returned list.
    """
    eps = sorted((float(e) for e in epsilons), reverse=True)
    return [recursive_decompose(solid, ctx, e, max_hulls, mode=mode,
                                seed=seed, metric=metric,
                                n_metric_samples=n_metric_samples,
                                blend_weight=blend_weight, threads=threads)
            for e in eps]


def sweep_table(decompositions):
    """Plot-ready rows of (epsilon, components, max concavity, recon)."""
    rows = []
    for dec in decompositions:
        m = dec.metrics or {}
        rows.append({
            "epsilon": dec.epsilon,
            "n_components": m.get("n_components", len(dec.leaves)),
            "max_concavity": m.get("max_concavity"),
            "reconstruction_error": m.get("reconstruction_error"),
        })
    return rows

"""Per-sample feature field optimized with a contrastive objective.

Features are unit vectors in R^k, one per surface sample. Convex pairs are
pulled together and non-convex pairs pushed apart through an InfoNCE-style
loss with summed negatives, computed symmetrically from both endpoints of
each (anchor, positive) pair:

    L = -1/2 [ log s(x,p) / (s(x,p) + sum_n s(x,n))
             + log s(p,x) / (s(p,x) + sum_n s(p,n)) ],   s(u,v) = exp(u.v/tau)

Each half is evaluated as logsumexp minus the positive logit, so the loss is
nonnegative and stable for any tau. The "plain" ablation replaces this with
0.5 * (-f_x.f_p + mean_n f_x.f_n).
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .seeding import STAGE_FEATURES, stage_rng


@dataclass
class LossReport:
    """One gradient evaluation: batch-mean loss and per-triplet breakdown."""

    total: float
    per_triplet: np.ndarray
    grad_norm: float


@dataclass
class FitInfo:
    """Optimization provenance kept alongside the fitted features."""

    mode: str
    steps: int
    seed: int
    final_loss: float
    trace: list = field(default_factory=list)  # batch-mean loss per step


@dataclass
class FeatureSet:
    """Unit-norm feature rows aligned with a TripletSet's sample table."""

    features: np.ndarray  # (n, k) float64, unit rows
    tau: float
    fit: "FitInfo | None" = None

    def __len__(self):
        return len(self.features)

    @property
    def k(self):
        return self.features.shape[1]


def similarity(u, v, tau):
    """exp(u.v / tau) for matching batches of feature vectors."""
    u = np.asarray(u)
    v = np.asarray(v)
    return np.exp((u * v).sum(axis=-1) / tau)


def init_features(n, k, rng):
    f = rng.standard_normal((n, k))
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    return f


def _gather(features, triplets, batch):
    a = triplets.anchors[batch]
    p = triplets.positives[batch]
    negs = triplets.negatives[batch]
    mask = negs >= 0
    fn = features[np.maximum(negs, 0)]
    return features[a], features[p], fn, mask, (a, p, negs)


def contrastive_terms(fa, fp, fn, mask, tau):
    """Per-triplet loss plus the softmax weights needed for the gradient."""
    s_ap = (fa * fp).sum(axis=1) / tau
    s_an = np.einsum("bmk,bk->bm", fn, fa) / tau
    s_pn = np.einsum("bmk,bk->bm", fn, fp) / tau
    s_an = np.where(mask, s_an, -np.inf)
    s_pn = np.where(mask, s_pn, -np.inf)

    def side(s_neg):
        m = np.maximum(s_ap, s_neg.max(axis=1))
        e_pos = np.exp(s_ap - m)
        e_neg = np.exp(s_neg - m[:, None])
        z = e_pos + e_neg.sum(axis=1)
        term = np.log(z) + m - s_ap
        return term, e_pos / z, e_neg / z[:, None]

    term1, sig_p1, sig_n1 = side(s_an)
    term2, sig_p2, sig_n2 = side(s_pn)
    loss = 0.5 * (term1 + term2)
    return loss, (sig_p1, sig_n1, sig_p2, sig_n2)


def contrastive_loss(features, triplets, tau, batch=None):
    """Mean contrastive loss over the given triplets (all by default)."""
    if batch is None:
        batch = np.arange(len(triplets))
    total = 0.0
    for s in range(0, len(batch), 1024):
        chunk = batch[s:s + 1024]
        fa, fp, fn, mask, _ = _gather(features, triplets, chunk)
        loss, _ = contrastive_terms(fa, fp, fn, mask, tau)
        total += loss.sum()
    return float(total / len(batch))


def plain_terms(fa, fp, fn, mask):
    counts = np.maximum(mask.sum(axis=1), 1)
    dots_n = np.einsum("bmk,bk->bm", fn, fa)
    mean_n = (dots_n * mask).sum(axis=1) / counts
    loss = 0.5 * (-(fa * fp).sum(axis=1) + mean_n)
    return loss, counts


def plain_loss(features, triplets, batch=None):
    if batch is None:
        batch = np.arange(len(triplets))
    total = 0.0
    for s in range(0, len(batch), 2048):
        chunk = batch[s:s + 2048]
        fa, fp, fn, mask, _ = _gather(features, triplets, chunk)
        loss, _ = plain_terms(fa, fp, fn, mask)
        total += loss.sum()
    return float(total / len(batch))


def _scatter_rows(grad, rows, contrib, n, k):
    idx = rows.astype(np.int64) * k
    flat = (idx[:, None] + np.arange(k)).ravel()
    grad += np.bincount(flat, weights=contrib.ravel(),
                        minlength=n * k).reshape(n, k)


def ambient_gradient(features, triplets, batch, tau, mode="contrastive"):
    """Batch-mean loss, its raw d loss / d F, and per-triplet losses."""
    n, k = features.shape
    fa, fp, fn, mask, (a, p, negs) = _gather(features, triplets, batch)
    b = len(batch)
    if mode == "contrastive":
        loss, (sig_p1, sig_n1, sig_p2, sig_n2) = contrastive_terms(
            fa, fp, fn, mask, tau)
        c_ap = 0.5 * ((sig_p1 - 1.0) + (sig_p2 - 1.0)) / tau
        ga = c_ap[:, None] * fp + (0.5 / tau) * np.einsum(
            "bm,bmk->bk", sig_n1, fn)
        gp = c_ap[:, None] * fa + (0.5 / tau) * np.einsum(
            "bm,bmk->bk", sig_n2, fn)
        gn = (0.5 / tau) * (sig_n1[:, :, None] * fa[:, None, :]
                            + sig_n2[:, :, None] * fp[:, None, :])
    elif mode == "plain":
        loss, counts = plain_terms(fa, fp, fn, mask)
        inv = (0.5 / counts)[:, None]
        ga = -0.5 * fp + inv * np.einsum("bm,bmk->bk", mask.astype(float), fn)
        gp = -0.5 * fa
        gn = (inv[:, :, None] * mask[:, :, None]) * fa[:, None, :]
    else:
        raise ValueError(f"unknown loss mode {mode!r}")

    grad = np.zeros_like(features)
    _scatter_rows(grad, a, ga / b, n, k)
    _scatter_rows(grad, p, gp / b, n, k)
    flat_mask = mask.ravel()
    _scatter_rows(grad, negs.ravel()[flat_mask],
                  gn.reshape(-1, k)[flat_mask] / b, n, k)
    return loss, grad


def tangent_project(grad, features):
    """Remove each row's component along its (unit) feature vector."""
    return grad - (grad * features).sum(axis=1, keepdims=True) * features


def loss_gradient(features, triplets, batch, tau, mode="contrastive"):
    """Tangent-projected batch gradient plus a LossReport.

    The projection keeps steps on the unit sphere's tangent plane; rows
    outside the batch have zero gradient, so projecting them is a no-op.
    """
    per, grad = ambient_gradient(features, triplets, batch, tau, mode=mode)
    grad = tangent_project(grad, features)
    report = LossReport(total=float(per.mean()), per_triplet=per,
                        grad_norm=float(np.linalg.norm(grad)))
    return grad, report


def spatial_neighbors(positions, degree):
    """Index matrix (n, degree) of each sample's nearest other samples."""
    tree = cKDTree(positions)
    k = min(degree + 1, len(positions))
    _, idx = tree.query(positions, k=k)
    if idx.ndim == 1:
        idx = idx[:, None]
    return np.ascontiguousarray(idx[:, 1:])


def optimize_features(triplets, cfg):
    """Fit the feature field with projected SGD plus neighborhood diffusion.

    Momentum SGD with cosine-decayed learning rate; gradients are projected
    onto the tangent space of each unit row and rows are renormalized after
    every step, so the unit-norm invariant holds throughout.

    Each step also relaxes every row toward the mean of its spatial kNN
    neighbors (weight cfg.smooth_weight). The contrastive signal only
    constrains samples that appear in triplets; on star-shaped regions,
    where every pair is convex, rows would otherwise keep their random
    initialization and clustering downstream would see noise. Diffusion
    against renormalization is a consensus dynamic: unconstrained regions
    collapse to the feature of whichever adjacent trained region dominates
    their boundary, while trained rows are re-pinned by the loss every
    step. The transition band between anti-aligned regions gets squeezed
    to the shortest separating curve, which is where a cut should fall.
    """
    n = len(triplets.samples)
    rng = stage_rng(cfg.seed, STAGE_FEATURES)
    feats = init_features(n, cfg.k, rng)
    vel = np.zeros_like(feats)
    t_total = len(triplets)
    trace = []
    steps = cfg.steps
    lam = cfg.smooth_weight
    nbr = None
    if lam > 0.0 and cfg.smooth_neighbors > 0 and n > 1:
        nbr = spatial_neighbors(triplets.samples.positions,
                                cfg.smooth_neighbors)
    for step in range(steps):
        batch = rng.integers(0, t_total, cfg.batch_size)
        grad, rep = loss_gradient(feats, triplets, batch, cfg.tau,
                                  mode=cfg.loss_mode)
        vel = cfg.momentum * vel + grad
        lr = cfg.learning_rate * 0.5 * (1.0 + np.cos(
            np.pi * step / max(steps - 1, 1)))
        feats -= lr * vel
        if nbr is not None:
            # ramp diffusion up as the lr decays: contrast forms first,
            # consensus cleans up after
            ramp = step / max(steps - 1, 1)
            feats += (lam * ramp) * (feats[nbr].mean(axis=1) - feats)
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        trace.append(rep.total)
    if cfg.loss_mode == "contrastive":
        final = contrastive_loss(feats, triplets, cfg.tau)
    else:
        final = plain_loss(feats, triplets)
    fit = FitInfo(mode=cfg.loss_mode, steps=steps, seed=cfg.seed,
                  final_loss=final, trace=trace)
    return FeatureSet(features=feats, tau=cfg.tau, fit=fit)


def pca_colors(features):
    """Project features to RGB in [0,1] via their top 3 principal axes.

    Degenerate directions (no variance) map to the 0.5 midpoint. Component
    signs are fixed by making each axis's largest-magnitude loading
    positive, so colors are reproducible.
    """
    x = np.asarray(features, dtype=np.float64)
    x = x - x.mean(axis=0, keepdims=True)
    cov = x.T @ x / max(len(x), 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:3]
    axes = evecs[:, order]
    for j in range(axes.shape[1]):
        i = int(np.argmax(np.abs(axes[:, j])))
        if axes[i, j] < 0:
            axes[:, j] = -axes[:, j]
    proj = x @ axes
    out = np.full((len(x), 3), 0.5)
    for j in range(proj.shape[1]):
        lo = proj[:, j].min()
        hi = proj[:, j].max()
        if hi - lo > 1e-12:
            out[:, j] = (proj[:, j] - lo) / (hi - lo)
    return out


# ---------------------------------------------------------------------------
# binary export

_FEAT_MAGIC = b"HFFEAT01"


def export_features(path, fs, sidecar_path=None):
    """float64 feature matrix with a versioned header plus a JSON sidecar."""
    path = str(path)
    with open(path, "wb") as fh:
        fh.write(_FEAT_MAGIC)
        n, k = fs.features.shape
        fh.write(struct.pack("<2qd", n, k, fs.tau))
        fh.write(fs.features.astype("<f8").tobytes())
    side = {
        "n": int(fs.features.shape[0]),
        "k": int(fs.features.shape[1]),
        "tau": fs.tau,
        "dtype": "float64",
    }
    if fs.fit is not None:
        side["fit"] = {
            "mode": fs.fit.mode,
            "steps": fs.fit.steps,
            "seed": fs.fit.seed,
            "final_loss": fs.fit.final_loss,
            "loss_trace": [round(float(v), 6) for v in fs.fit.trace],
        }
    if sidecar_path is None:
        sidecar_path = path[:-4] + ".json" if path.endswith(".bin") \
            else path + ".json"
    with open(sidecar_path, "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar_path


def load_features(path):
    from .errors import ParseError
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _FEAT_MAGIC:
            raise ParseError(f"{path}: not a feature dump (magic {magic!r})")
        n, k, tau = struct.unpack("<2qd", fh.read(24))
        raw = np.frombuffer(fh.read(8 * n * k), dtype="<f8")
        if len(raw) != n * k:
            raise ParseError(f"{path}: truncated feature dump")
    return FeatureSet(features=raw.reshape(n, k).astype(np.float64),
                      tau=float(tau))

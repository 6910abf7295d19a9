"""Single-call pipeline: sample, mine triplets, fit features, decompose.

Shared by the CLI and by tests so both run the identical code path. The
convex shortcut lives here: when negative mining starves (the input has no
detectable concave pairs), the result is the input's own hull as a single
component instead of an error.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .decompose import (Component, Decomposition, build_field_context,
                        recursive_decompose)
from .errors import OracleStarvation
from .features import optimize_features
from .hulls import hull_from_surface
from .metrics import concavity as score_concavity
from .metrics import evaluate_decomposition
from .oracle import build_triplets
from .seeding import STAGE_DECOMP, STAGE_SURFACE, stage_rng


@dataclass
class PipelineResult:
    decomposition: Decomposition
    triplets: object = None
    features: object = None
    context: object = None
    convex_shortcut: bool = False
    timings: dict = field(default_factory=dict)


def _convex_result(solid, pool, cfg, timings):
    """Single-hull decomposition used when the input is convex."""
    hull = hull_from_surface(solid.vertices, solid.faces,
                             backend=solid.backend)
    comp = Component(
        sample_ids=np.arange(len(pool), dtype=np.int64),
        face_ids=np.arange(len(solid.faces), dtype=np.int64),
        hull=hull, path=(),
    )
    comp.concavity = score_concavity(
        hull, solid, patch=None, n_samples=cfg.n_metric_samples,
        rng=stage_rng(cfg.seed, STAGE_DECOMP), metric=cfg.metric)
    if comp.concavity.value >= cfg.epsilon:
        comp.flags = ("convex_shortcut",)
    dec = Decomposition(
        leaves=[comp], tree=[comp], epsilon=cfg.epsilon,
        max_hulls=cfg.max_hulls,
        stats={"pops": [], "events": [], "n_splits": 0,
               "convex_shortcut": True},
    )
    dec.metrics = evaluate_decomposition(
        solid, [hull], patches=None, n_samples=cfg.n_metric_samples,
        seed=cfg.seed, metric=cfg.metric, threads=cfg.threads)
    return PipelineResult(decomposition=dec, convex_shortcut=True,
                          timings=timings)


def run_pipeline(solid, cfg, features=None):
    """Decompose one solid end to end under a RunConfig.

    features: optional precomputed FeatureSet (from a prior features-only
    run); sampling and triplet mining still execute so the result is
    byte-identical to the single-invocation path under the same seed.
    Final metrics are evaluated against the exported-hull form (region =
    solid restricted to each hull) so a later re-evaluation from the
    artifacts alone reproduces them exactly.
    """
    timings = {}
    t0 = time.perf_counter()
    pool = solid.sample_surface(cfg.n_surface_samples,
                                stage_rng(cfg.seed, STAGE_SURFACE))
    timings["sample"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        triplets = build_triplets(solid, pool, cfg)
    except OracleStarvation:
        timings["triplets"] = time.perf_counter() - t0
        return _convex_result(solid, pool, cfg, timings)
    timings["triplets"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if features is None:
        features = optimize_features(triplets, cfg)
    timings["features"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ctx = build_field_context(solid, triplets, features, cfg.mode)
    dec = recursive_decompose(
        solid, ctx, cfg.epsilon, cfg.max_hulls, mode=cfg.mode,
        seed=cfg.seed, metric=cfg.metric,
        n_metric_samples=cfg.n_metric_samples,
        blend_weight=cfg.blend_weight, evaluate=False,
        threads=cfg.threads)
    timings["decompose"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    dec.metrics = evaluate_decomposition(
        solid, dec.hulls, patches=None, n_samples=cfg.n_metric_samples,
        seed=cfg.seed, metric=cfg.metric, threads=cfg.threads)
    timings["metrics"] = time.perf_counter() - t0
    return PipelineResult(decomposition=dec, triplets=triplets,
                          features=features, context=ctx,
                          timings=timings)

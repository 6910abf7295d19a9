"""Approximate convex decomposition via contrastive feature fields."""

__version__ = "0.1.0"

from . import errors
from .config import RunConfig
from .decompose import (Component, Decomposition, binary_split,
                        build_field_context, granularity_sweep,
                        recursive_decompose)
from .features import FeatureSet, optimize_features
from .hulls import convex_hull, hull_from_surface, robust_hull
from .mesh import SolidMesh, SurfaceSamples, load_mesh
from .metrics import concavity, evaluate_decomposition, reconstruction_error
from .oracle import TripletSet, build_triplets, is_convex_pair
from .pipeline import PipelineResult, run_pipeline

__all__ = [
    "errors", "SolidMesh", "SurfaceSamples", "load_mesh", "RunConfig",
    "Component", "Decomposition", "binary_split", "build_field_context",
    "granularity_sweep", "recursive_decompose", "FeatureSet",
    "optimize_features", "convex_hull", "hull_from_surface", "robust_hull",
    "concavity", "evaluate_decomposition", "reconstruction_error",
    "TripletSet", "build_triplets", "is_convex_pair", "PipelineResult",
    "run_pipeline", "__version__",
]

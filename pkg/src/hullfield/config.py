"""Run configuration: one flat record of every knob in the pipeline.

A (config, seed) pair fully determines every derived artifact byte except
timing fields. Configs round-trip through JSON.
"""

import dataclasses
import json
from dataclasses import dataclass


@dataclass
class RunConfig:
    # io (optional; CLI positional args fill these)
    input_path: str = ""
    output_dir: str = ""
    # decomposition
    epsilon: float = 0.1          # concavity acceptance threshold
    max_hulls: int = 32           # hard cap on component count
    mode: str = "mesh"            # "mesh" (face clustering) or "pointcloud"
    blend_weight: float = 0.15    # spatial weight in pointcloud metric
    # feature field
    k: int = 64                   # feature dimension
    tau: float = 0.1              # similarity temperature
    steps: int = 2000             # optimizer steps
    batch_size: int = 256         # triplets per step
    learning_rate: float = 0.05
    momentum: float = 0.9
    loss_mode: str = "contrastive"  # or "plain"
    smooth_weight: float = 0.5    # peak per-step feature diffusion strength
    smooth_neighbors: int = 8     # kNN graph degree for diffusion (0 = off)
    # sampling / triplets
    n_surface_samples: int = 10000
    n_anchors: int = 1024
    n_pos_per_anchor: int = 64
    n_neg_candidates: int = 1024
    n_neg_per_triplet: int = 512
    hard_fraction: float = 0.5
    hard_min_dist: float = 0.02
    # metrics
    metric: str = "hausdorff"     # or "chamfer"
    n_metric_samples: int = 20000
    # misc
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        pos_fields = ["max_hulls", "k", "steps", "batch_size",
                      "n_surface_samples", "n_anchors", "n_pos_per_anchor",
                      "n_neg_candidates", "n_neg_per_triplet",
                      "n_metric_samples", "threads"]
        for name in pos_fields:
            v = getattr(self, name)
            if not isinstance(v, (int,)) or isinstance(v, bool) or v <= 0:
                raise ValueError(f"{name} must be a positive integer, "
                                 f"got {v!r}")
        for name in ["tau", "learning_rate", "blend_weight",
                     "hard_min_dist"]:
            v = float(getattr(self, name))
            if not v > 0 and name not in ("blend_weight",):
                raise ValueError(f"{name} must be positive, got {v!r}")
            setattr(self, name, v)
        self.momentum = float(self.momentum)
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got "
                             f"{self.momentum!r}")
        self.smooth_weight = float(self.smooth_weight)
        if not 0.0 <= self.smooth_weight < 1.0:
            raise ValueError(f"smooth_weight must be in [0, 1), got "
                             f"{self.smooth_weight!r}")
        if not isinstance(self.smooth_neighbors, int) or \
                isinstance(self.smooth_neighbors, bool) or \
                self.smooth_neighbors < 0:
            raise ValueError("smooth_neighbors must be a non-negative "
                             "integer")
        self.epsilon = float(self.epsilon)
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in (0, 1], got "
                             f"{self.epsilon!r}")
        self.hard_fraction = float(self.hard_fraction)
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise ValueError("hard_fraction must be in [0, 1]")
        if not 0.0 <= self.blend_weight <= 1.0:
            raise ValueError("blend_weight must be in [0, 1]")
        if self.mode not in ("mesh", "pointcloud"):
            raise ValueError(f"mode must be 'mesh' or 'pointcloud', got "
                             f"{self.mode!r}")
        if self.loss_mode not in ("contrastive", "plain"):
            raise ValueError(f"loss_mode must be 'contrastive' or 'plain', "
                             f"got {self.loss_mode!r}")
        if self.metric not in ("hausdorff", "chamfer"):
            raise ValueError(f"metric must be 'hausdorff' or 'chamfer', got "
                             f"{self.metric!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ValueError("seed must be an integer")
        for name in ("input_path", "output_dir"):
            if not isinstance(getattr(self, name), str):
                raise ValueError(f"{name} must be a string path")
        if self.n_neg_per_triplet > self.n_neg_candidates:
            raise ValueError("n_neg_per_triplet cannot exceed "
                             "n_neg_candidates")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

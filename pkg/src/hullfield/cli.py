"""Command-line driver: decompose, eval, sweep, features.

Every flag mirrors a RunConfig key; a --config JSON file supplies defaults
and explicit flags override it. All geometry is normalized internally
(centered, scaled to a unit half-extent); exported hulls are mapped back
to the input coordinate frame, while metrics are reported in normalized
units so thresholds are size-independent.

Exit codes: 0 ok, 2 parse error, 3 degenerate/invalid geometry,
4 non-convex input where convexity was required, 5 internal error,
6 convex-input shortcut (success; the output is the single hull).
"""

import argparse
import csv
import glob
import json
import os
import sys
import traceback

import numpy as np

from . import __version__
from .config import RunConfig
from .decompose import granularity_sweep, sweep_table
from .errors import (EXIT_CONVEX_SHORTCUT, EXIT_GEOMETRY, EXIT_INTERNAL,
                     EXIT_NONCONVEX_INPUT, EXIT_OK, EXIT_PARSE,
                     DegenerateGeometry, DegenerateHull, EmptyInterior,
                     HullfieldError, LowAcceptance, NonConvexInput,
                     NonManifold, OracleStarvation, ParseError)
from .features import export_features, load_features, optimize_features, \
    pca_colors
from .hulls import hull_from_surface
from .mesh import load_mesh, save_obj, save_obj_groups, save_ply_points, \
    _parse_obj
from .metrics import evaluate_decomposition
from .oracle import build_triplets
from .pipeline import run_pipeline
from .seeding import STAGE_SURFACE, stage_rng

# flags whose RunConfig fields are filled from positional arguments
_POSITIONAL_FIELDS = {"input_path", "output_dir"}


def _add_config_flags(p):
    """One optional flag per RunConfig key; None means 'not given'."""
    for f_ in RunConfig.__dataclass_fields__.values():
        if f_.name in _POSITIONAL_FIELDS:
            continue
        flag = "--" + f_.name.replace("_", "-")
        if f_.type in ("int", int):
            p.add_argument(flag, type=int, default=None)
        elif f_.type in ("float", float):
            p.add_argument(flag, type=float, default=None)
        else:
            p.add_argument(flag, type=str, default=None)
    p.add_argument("--config", type=str, default=None,
                   help="JSON config file; explicit flags override it")


def resolve_config(args, input_path=None, output_dir=None):
    """defaults <- config file <- explicit flags, in that order."""
    base = RunConfig().to_dict()
    if args.config:
        with open(args.config) as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{args.config}: {exc}") from exc
        unknown = set(file_cfg) - set(base)
        if unknown:
            raise ParseError(
                f"{args.config}: unknown config keys {sorted(unknown)}")
        base.update(file_cfg)
    for key in base:
        if key in _POSITIONAL_FIELDS:
            continue
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    if input_path is not None:
        base["input_path"] = input_path
    if output_dir is not None:
        base["output_dir"] = output_dir
    try:
        return RunConfig.from_dict(base)
    except (ValueError, TypeError) as exc:
        raise ParseError(f"bad configuration: {exc}") from exc


def _json_dump(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True)
    with open(path, "w") as fh:
        fh.write(text + "\n")


def _denormalize(vertices, center, scale):
    return np.asarray(vertices) * scale + center


def _export_hulls(outdir, leaves, center, scale):
    hull_dir = os.path.join(outdir, "hulls")
    os.makedirs(hull_dir, exist_ok=True)
    files = []
    parts = []
    for i, leaf in enumerate(leaves):
        verts = _denormalize(leaf.hull.vertices, center, scale)
        name = f"hull_{i:03d}"
        path = os.path.join(hull_dir, name + ".obj")
        save_obj(path, verts, leaf.hull.faces)
        files.append(os.path.relpath(path, outdir))
        parts.append((name, verts, leaf.hull.faces))
    combined = os.path.join(outdir, "hulls_combined.obj")
    save_obj_groups(combined, parts)
    files.append(os.path.relpath(combined, outdir))
    return files


def _tree_dot(dec):
    lines = ["digraph decomposition {", "  node [shape=box];"]
    for i, comp in enumerate(dec.tree):
        conc = "?" if comp.concavity is None else \
            f"{comp.concavity.value:.4f}"
        flags = ",".join(comp.flags) if comp.flags else ""
        label = f"id {i}\\nconc {conc}"
        if flags:
            label += f"\\n[{flags}]"
        style = ' style=filled fillcolor="lightgrey"' if comp.is_leaf \
            else ""
        lines.append(f'  n{i} [label="{label}"{style}];')
        for c in comp.children:
            lines.append(f"  n{i} -> n{c};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _write_manifest(outdir, cfg, result, files, extra=None):
    dec = result.decomposition
    manifest = {
        "tool": {"name": "hullfield", "version": __version__},
        "config": cfg.to_dict(),
        "timings": {k: round(v, 6) for k, v in result.timings.items()},
        "metrics": dec.metrics,
        "convex_shortcut": result.convex_shortcut,
        "epsilon": dec.epsilon,
        "max_hulls": dec.max_hulls,
        "seed": cfg.seed,
        "n_components": len(dec.leaves),
        "leaf_flags": [list(leaf.flags) for leaf in dec.leaves],
        "tree": dec.tree_records(),
        "files": sorted(files),
    }
    if extra:
        manifest.update(extra)
    _json_dump(manifest, os.path.join(outdir, "manifest.json"))
    return manifest


def cmd_decompose(args):
    cfg = resolve_config(args, input_path=args.input,
                         output_dir=args.output)
    outdir = cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    solid = load_mesh(cfg.input_path)
    norm, center, scale = solid.normalize()

    features = None
    if args.features:
        features = load_features(args.features)
        if features.k != cfg.k:
            raise ParseError(
                f"feature file has k={features.k}, config wants k={cfg.k}")

    result = run_pipeline(norm, cfg, features=features)
    dec = result.decomposition

    files = _export_hulls(outdir, dec.leaves, center, scale)
    _json_dump(dec.metrics, os.path.join(outdir, "metrics.json"))
    files.append("metrics.json")
    cfg.to_json(os.path.join(outdir, "config.json"))
    files.append("config.json")
    with open(os.path.join(outdir, "tree.dot"), "w") as fh:
        fh.write(_tree_dot(dec))
    files.append("tree.dot")
    files.append("manifest.json")
    _write_manifest(outdir, cfg, result, files,
                    extra={"normalize": {"center": list(map(float, center)),
                                         "scale": float(scale)}})
    n = len(dec.leaves)
    fmax = dec.metrics["max_concavity"]
    print(f"{cfg.input_path}: {n} hull{'s' if n != 1 else ''}, "
          f"max concavity {fmax:.6g}, reconstruction "
          f"{dec.metrics['reconstruction_error']:.6g} -> {outdir}")
    if result.convex_shortcut:
        print("input is convex: emitted its own hull (shortcut)")
        return EXIT_CONVEX_SHORTCUT
    return EXIT_OK


def _load_hull_files(hull_dir, center, scale):
    paths = sorted(glob.glob(os.path.join(hull_dir, "*.obj")))
    if not paths:
        raise ParseError(f"no .obj hull files in {hull_dir}")
    hulls = []
    for path in paths:
        verts, faces = _parse_obj(path)
        verts = (np.asarray(verts, dtype=np.float64) - center) / scale
        hulls.append(hull_from_surface(verts, faces))
    return paths, hulls


def cmd_eval(args):
    cfg = resolve_config(args, input_path=args.input)
    solid = load_mesh(cfg.input_path)
    norm, center, scale = solid.normalize()
    paths, hulls = _load_hull_files(args.hulls, center, scale)
    metrics = evaluate_decomposition(
        norm, hulls, patches=None, n_samples=cfg.n_metric_samples,
        seed=cfg.seed, metric=cfg.metric, threads=cfg.threads)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    print(text)
    if args.output:
        os.makedirs(args.output, exist_ok=True)
        with open(os.path.join(args.output, "metrics.json"), "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def _parse_epsilons(spec_str):
    try:
        eps = [float(tok) for tok in spec_str.split(",") if tok.strip()]
    except ValueError as exc:
        raise ParseError(f"bad --epsilons value: {spec_str!r}") from exc
    if not eps:
        raise ParseError("--epsilons needs at least one value")
    return sorted(eps, reverse=True)


def cmd_sweep(args):
    cfg = resolve_config(args, input_path=args.input,
                         output_dir=args.output)
    epsilons = _parse_epsilons(args.epsilons)
    outdir = cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    solid = load_mesh(cfg.input_path)
    norm, center, scale = solid.normalize()

    convex = False
    decs = []
    base = run_pipeline(norm, cfg.replace(epsilon=epsilons[0]))
    if base.convex_shortcut:
        convex = True
        decs = [base.decomposition for _ in epsilons]
        for e, d in zip(epsilons, decs):
            d.epsilon = e
    else:
        decs = [base.decomposition]
        decs += granularity_sweep(
            norm, base.context, epsilons[1:], cfg.max_hulls,
            mode=cfg.mode, seed=cfg.seed, metric=cfg.metric,
            n_metric_samples=cfg.n_metric_samples,
            blend_weight=cfg.blend_weight, threads=cfg.threads)

    rows = sweep_table(decs)
    csv_path = os.path.join(outdir, "sweep.csv")
    with open(csv_path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["epsilon", "n_components",
                                            "max_concavity",
                                            "reconstruction_error"])
        wr.writeheader()
        for row in rows:
            wr.writerow({k: repr(v) if isinstance(v, float) else v
                         for k, v in row.items()})
    files = ["sweep.csv", "config.json", "manifest.json"]
    for e, dec in zip(epsilons, decs):
        sub = os.path.join(outdir, f"eps_{e:g}")
        os.makedirs(sub, exist_ok=True)
        hull_files = _export_hulls(sub, dec.leaves, center, scale)
        files += [os.path.relpath(os.path.join(sub, hf), outdir)
                  for hf in hull_files]
    cfg.to_json(os.path.join(outdir, "config.json"))
    _write_manifest(outdir, cfg, base, files,
                    extra={"sweep": rows, "epsilons": epsilons})
    for row in rows:
        print(f"epsilon {row['epsilon']:g}: {row['n_components']} "
              f"components, max concavity {row['max_concavity']:.6g}")
    return EXIT_CONVEX_SHORTCUT if convex else EXIT_OK


def cmd_features(args):
    cfg = resolve_config(args, input_path=args.input,
                         output_dir=args.output)
    outdir = cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    solid = load_mesh(cfg.input_path)
    norm, center, scale = solid.normalize()
    pool = norm.sample_surface(cfg.n_surface_samples,
                               stage_rng(cfg.seed, STAGE_SURFACE))
    try:
        triplets = build_triplets(norm, pool, cfg)
    except OracleStarvation:
        print("input is convex: no concave pairs, nothing to fit",
              file=sys.stderr)
        return EXIT_CONVEX_SHORTCUT
    fs = optimize_features(triplets, cfg)
    feat_path = os.path.join(outdir, "features.bin")
    sidecar = export_features(feat_path, fs)
    colors = (pca_colors(fs.features) * 255).astype(np.uint8)
    ply_path = os.path.join(outdir, "colors.ply")
    save_ply_points(ply_path,
                    _denormalize(pool.positions, center, scale), colors)
    cfg.to_json(os.path.join(outdir, "config.json"))
    print(f"{cfg.input_path}: wrote {feat_path}, {sidecar}, {ply_path}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="hullfield",
        description="Approximate convex decomposition via a contrastive "
                    "per-sample feature field.")
    p.add_argument("--version", action="version",
                   version=f"hullfield {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    pd = sub.add_parser("decompose", help="full pipeline on one mesh")
    pd.add_argument("input", help="input mesh (.obj or .ply, closed)")
    pd.add_argument("-o", "--output", required=True, help="output directory")
    pd.add_argument("--features", default=None,
                    help="reuse a features.bin from a prior features run")
    _add_config_flags(pd)
    pd.set_defaults(func=cmd_decompose)

    pe = sub.add_parser("eval", help="re-evaluate exported hulls")
    pe.add_argument("input", help="input mesh the hulls decompose")
    pe.add_argument("hulls", help="directory of convex hull .obj files")
    pe.add_argument("-o", "--output", default=None,
                    help="directory for metrics.json (default: stdout only)")
    _add_config_flags(pe)
    pe.set_defaults(func=cmd_eval)

    ps = sub.add_parser("sweep", help="decompose at several thresholds")
    ps.add_argument("input")
    ps.add_argument("-o", "--output", required=True)
    ps.add_argument("--epsilons", required=True,
                    help="comma-separated thresholds, e.g. 0.2,0.1,0.05")
    _add_config_flags(ps)
    ps.set_defaults(func=cmd_sweep)

    pf = sub.add_parser("features", help="fit and export the feature field")
    pf.add_argument("input")
    pf.add_argument("-o", "--output", required=True)
    _add_config_flags(pf)
    pf.set_defaults(func=cmd_features)
    return p


_ERROR_EXIT = [
    ((ParseError, FileNotFoundError, IsADirectoryError), "parse",
     EXIT_PARSE),
    ((NonConvexInput,), "nonconvex-input", EXIT_NONCONVEX_INPUT),
    ((NonManifold, DegenerateGeometry, LowAcceptance, DegenerateHull,
      EmptyInterior), "geometry", EXIT_GEOMETRY),
    ((HullfieldError,), "internal", EXIT_INTERNAL),
]


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single mapping point
        for types, category, code in _ERROR_EXIT:
            if isinstance(exc, types):
                print(f"error [{category}]: {exc}", file=sys.stderr)
                return code
        traceback.print_exc()
        print(f"error [internal]: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

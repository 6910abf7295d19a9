"""Benchmark the compiled kernel backend against the numpy fallback.

Times the four batched geometry queries used throughout the pipeline on
one procedural mesh. The fallback scans every triangle per query (in
chunks), so expect orders of magnitude between the columns once meshes
reach a few thousand triangles.

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --shape el_prism --rays 10000
"""

import argparse
import time

import numpy as np

from hullfield import shapes
from hullfield.kernels import HAVE_COMPILED, make_accel


def make_queries(mesh, n, seed):
    rng = np.random.default_rng(seed)
    lo, hi = mesh.bbox
    pad = 0.25 * mesh.bbox_diag
    origins = rng.uniform(lo - pad, hi + pad, (n, 3))
    dirs = rng.standard_normal((n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return origins, dirs


def best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(
        description="time compiled vs brute geometry kernels")
    ap.add_argument("--shape", default="torus",
                    help="constructor name from hullfield.shapes")
    ap.add_argument("--rays", type=int, default=5000,
                    help="queries per kernel call")
    ap.add_argument("--repeats", type=int, default=3,
                    help="timed repeats per cell; best is reported")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    mesh = getattr(shapes, args.shape)()
    origins, dirs = make_queries(mesh, args.rays, args.seed)

    backends = (["compiled"] if HAVE_COMPILED else []) + ["brute"]
    if not HAVE_COMPILED:
        print("compiled extension not built; timing the fallback only")
    accels = {b: make_accel(mesh.vertices, mesh.faces, backend=b)
              for b in backends}

    cases = [
        ("closest", lambda a: a.closest(origins, dirs, 0.0, np.inf)),
        ("any_hit", lambda a: a.any_hit(origins, dirs, 0.0, np.inf)),
        ("count_hits", lambda a: a.count_hits(origins, dirs, 0.0, np.inf)),
        ("closest_point", lambda a: a.closest_point(origins)),
    ]

    # agreement check before timing: both backends must answer identically
    if len(backends) == 2:
        for name, call in cases:
            got = [np.asarray(call(accels[b])[0] if isinstance(
                call(accels[b]), tuple) else call(accels[b]))
                for b in backends]
            if not np.allclose(got[0], got[1], equal_nan=True):
                raise SystemExit(f"backend mismatch in {name}")

    print(f"{args.shape}: {len(mesh.faces)} triangles, "
          f"{args.rays} queries per call, best of {args.repeats}")
    header = f"{'kernel':<14}" + "".join(f"{b:>13}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, call in cases:
        times = [best_of(lambda a=accels[b]: call(a), args.repeats)
                 for b in backends]
        row = f"{name:<14}" + "".join(f"{t * 1e3:>11.1f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[1] / times[0]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()

"""Compare the numba and numpy assembly backends.

    python benchmarks/bench_kernels.py --n 64 128 256 --repeat 5

Each kernel is called once per backend before timing so that numba
compilation (or cache loading) is excluded.  Results are checked for equality
between backends before any timing is reported.
"""

import argparse
import json
import time

import numpy as np

from mfg_stable import fem, kernels
from mfg_stable.mesh import build_mesh


def cases(mesh, rng):
    N = mesh.node_count
    w = 1.0 + 0.1 * rng.standard_normal(N)
    u = rng.standard_normal(N)
    Du = fem.element_gradient(mesh, u)
    return {
        "weighted_stiffness": lambda: fem.assemble_weighted_stiffness(mesh, w),
        "weighted_mass": lambda: fem.assemble_weighted_mass(mesh, w),
        "convection": lambda: fem.assemble_convection(mesh, Du),
        "flux_vector": lambda: fem.transport_vector(mesh, w, u),
        "element_gradient": lambda: fem.element_gradient(mesh, u),
    }


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _values(x):
    return x.data if hasattr(x, "data") and hasattr(x, "indptr") else np.asarray(x)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--n", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)

    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    results = []
    original = kernels.backend()
    try:
        for n in args.n:
            mesh = build_mesh(args.dim, n)
            work = cases(mesh, np.random.default_rng(0))
            for name, fn in work.items():
                row = {"n": n, "elements": mesh.element_count, "kernel": name}
                outputs = {}
                for be in ("numba", "numpy"):
                    kernels.set_backend(be)
                    outputs[be] = _values(fn())  # warm-up and parity sample
                    row[be] = best_of(fn, args.repeat)
                if not np.allclose(outputs["numba"], outputs["numpy"], rtol=1e-12, atol=1e-12):
                    raise SystemExit(f"backend mismatch in {name} at n={n}")
                row["speedup"] = row["numpy"] / row["numba"]
                results.append(row)
    finally:
        kernels.set_backend(original)

    print(f"{'n':>5} {'elements':>9} {'kernel':<20} {'numba [ms]':>11} {'numpy [ms]':>11} {'speedup':>8}")
    for r in results:
        print(
            f"{r['n']:>5} {r['elements']:>9} {r['kernel']:<20} "
            f"{1e3 * r['numba']:>11.3f} {1e3 * r['numpy']:>11.3f} {r['speedup']:>8.2f}"
        )
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()

"""Compiled kernels vs the NumPy fallback.

    python benchmarks/bench_kernels.py [--resolution 256] [--repeat 5] [--json out.json]

Times node_moments (per-node log-sum-exp over the circulation atoms) and
ball_masses (concentration-function sums) on a flat-torus-sized problem and
checks that both backends agree.
"""
import argparse
import json
import timeit

import numpy as np

from nerimf import _kernels_py
from nerimf.measure import CirculationMeasure, parse_measure_spec

try:
    from nerimf import _kernels
except ImportError:
    _kernels = None


def _measures():
    yield "delta_1", CirculationMeasure.dirac(1.0)
    yield "two_atoms", CirculationMeasure.from_atoms([(1.0, 0.5), (0.5, 0.5)])
    yield "atom+100_nodes", parse_measure_spec({"atoms": [{"alpha": 1.0, "weight": 0.5}],
                                                "density": {"name": "uniform", "nodes": 100, "mass": 0.5}})


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--resolution", type=int, default=256)
    ap.add_argument("--centers", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    n = args.resolution ** 2
    u = 20.0 * rng.random(n)
    rows = []
    for name, P in _measures():
        a, lw = P.alphas, P.log_weights
        tc = _best(lambda: _kernels.node_moments(u, a, lw), args.repeat)
        tp = _best(lambda: _kernels_py.node_moments(u, a, lw), args.repeat)
        err = max(float(np.max(np.abs(x - y) / np.maximum(1.0, np.abs(y))))
                  for x, y in zip(_kernels.node_moments(u, a, lw), _kernels_py.node_moments(u, a, lw)))
        rows.append({"kernel": "node_moments", "case": f"{name} (k={a.size})", "cython_s": tc, "python_s": tp,
                     "speedup": tp / tc, "max_rel_diff": err})

    x, y = rng.random(n), rng.random(n)
    mass = rng.random(n)
    cx, cy = rng.random(args.centers), rng.random(args.centers)
    radii = np.geomspace(0.01, 0.5, 20)
    tc = _best(lambda: _kernels.ball_masses(x, y, mass, cx, cy, radii, 1.0, 1.0), args.repeat)
    tp = _best(lambda: _kernels_py.ball_masses(x, y, mass, cx, cy, radii, 1.0, 1.0), args.repeat)
    A = _kernels.ball_masses(x, y, mass, cx, cy, radii, 1.0, 1.0)
    B = _kernels_py.ball_masses(x, y, mass, cx, cy, radii, 1.0, 1.0)
    rows.append({"kernel": "ball_masses", "case": f"{args.centers} centres x 20 radii", "cython_s": tc,
                 "python_s": tp, "speedup": tp / tc, "max_rel_diff": float(np.max(np.abs(A - B) / np.maximum(1.0, B)))})

    print(f"n = {n} nodes, best of {args.repeat}")
    print(f"{'kernel':<14}{'case':<30}{'cython [s]':>12}{'numpy [s]':>12}{'speedup':>9}{'max diff':>11}")
    for r in rows:
        print(f"{r['kernel']:<14}{r['case']:<30}{r['cython_s']:>12.4f}{r['python_s']:>12.4f}"
              f"{r['speedup']:>9.2f}{r['max_rel_diff']:>11.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"resolution": args.resolution, "rows": rows}, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

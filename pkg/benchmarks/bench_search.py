"""Compiled vs numpy-fallback search kernels.

    python3 benchmarks/bench_search.py [--sizes 512 2048 8192] [--repeat 3]

Prints the best-of-``repeat`` wall time per kernel and backend, the speedup,
and whether both backends returned identical results.
"""

import argparse
import time

import numpy as np

from pointattn import spatial


def _cloud(n, rng):
    # a 2 m square floor with a sphere on it: roughly the synthetic-scene density
    floor = np.column_stack([rng.uniform(0, 2, (n // 2, 2)), np.zeros(n // 2)])
    v = rng.normal(size=(n - n // 2, 3))
    v = 0.4 * v / np.linalg.norm(v, axis=1, keepdims=True) + (1.0, 1.0, 0.4)
    return np.vstack([floor, v]) + rng.normal(0, 0.005, (n, 3))


def _best(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _jobs(pos, radius):
    n = len(pos)
    centers = np.arange(0, n, 4)
    return {
        "multidir m=1": lambda: spatial.search("multidir", pos, centers, radius, 1).indices,
        "multidir m=3": lambda: spatial.search("multidir", pos, centers, radius, 3).indices,
        "knn K=16": lambda: spatial.search("knn", pos, centers, radius, 1).indices,
        "ball K=16": lambda: spatial.search("ball", pos, centers, radius, 1).indices,
        "fps n/4": lambda: spatial.farthest_point_sampling(pos, n // 4),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[512, 2048, 8192])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--radius", type=float, default=0.2)
    args = ap.parse_args(argv)

    backends = ["python"]
    try:
        spatial.use_backend("compiled")
        backends.insert(0, "compiled")
    except ImportError:
        print("compiled extension not built; timing the numpy fallback only")

    print(f"{'kernel':<14}{'N':>6}" + "".join(f"{b + ' s':>14}" for b in backends)
          + (f"{'speedup':>10}{'same':>6}" if len(backends) == 2 else ""))
    rng = np.random.default_rng(0)
    for n in args.sizes:
        pos = _cloud(n, rng)
        for name in _jobs(pos, args.radius):
            times, outs = [], []
            for b in backends:
                spatial.use_backend(b)
                t, out = _best(_jobs(pos, args.radius)[name], args.repeat)
                times.append(t)
                outs.append(out)
            line = f"{name:<14}{n:>6}" + "".join(f"{t:>14.5f}" for t in times)
            if len(times) == 2:
                line += f"{times[1] / times[0]:>9.1f}x{str(np.array_equal(*outs)):>6}"
            print(line, flush=True)
    spatial.use_backend(backends[0])


if __name__ == "__main__":
    main()

"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends get identical inputs; the script also reports the largest
difference between their outputs so a speedup never hides a mismatch.
"""

import argparse
import time

import numpy as np

from appgrowth import _kernels


def skipgram_case(W=200, d=50, n=20_000, seed=0):
    rng = np.random.default_rng(seed)
    win = rng.uniform(-0.5 / d, 0.5 / d, size=(W, d))
    wout = np.zeros((W, d))
    centers = rng.integers(0, W, size=n).astype(np.int64)
    contexts = rng.integers(0, W, size=n).astype(np.int64)
    order = rng.permutation(n).astype(np.int64)
    return win, wout, centers, contexts, order


def greedy_case(C=20, seed=0):
    rng = np.random.default_rng(seed)
    cap = rng.uniform(500, 5000, size=C)
    rate = rng.uniform(1e-4, 1e-2, size=C)
    capacity = np.full(C, np.inf)
    return cap, rate, capacity, 50_000.0


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_skipgram(mod, repeat):
    win, wout, c, x, order = skipgram_case()

    def run():
        a, b = win.copy(), wout.copy()
        total = mod.skipgram_epoch(a, b, c, x, order, 0.025)
        return a, b, total

    return best_of(run, repeat)


def bench_greedy(mod, repeat):
    cap, rate, capacity, total = greedy_case()
    return best_of(lambda: mod.greedy_allocate(cap, rate, capacity, total, 5000), repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if _kernels.compiled is None:
        print("compiled kernels not built; timing the Python fallback only")
    print(f"{'kernel':<16}{'python (s)':>12}{'cython (s)':>12}{'speedup':>10}{'max diff':>12}")
    for name, bench in (("skipgram_epoch", bench_skipgram), ("greedy_allocate", bench_greedy)):
        t_py, out_py = bench(_kernels.python, args.repeat)
        if _kernels.compiled is None:
            print(f"{name:<16}{t_py:>12.4f}{'-':>12}{'-':>10}{'-':>12}")
            continue
        t_c, out_c = bench(_kernels.compiled, args.repeat)
        if name == "skipgram_epoch":
            diff = max(np.max(np.abs(out_py[0] - out_c[0])), np.max(np.abs(out_py[1] - out_c[1])))
        else:
            diff = float(np.max(np.abs(out_py[0] - out_c[0])))
        print(f"{name:<16}{t_py:>12.4f}{t_c:>12.4f}{t_py / t_c:>9.1f}x{diff:>12.2e}")


if __name__ == "__main__":
    main()

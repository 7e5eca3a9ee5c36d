"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--trajectories 2000]

Each row is the best of ``--repeat`` timings. Outputs of the two backends
are checked for agreement before timing.
"""

import argparse
import timeit

import numpy as np

from shepherd import kernels


def returns_case(n_traj, rng):
    lengths = rng.integers(1, 31, size=n_traj)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    rewards = rng.uniform(-1, 2, size=int(offsets[-1]))
    return rewards, offsets


def descent_case(n, rng):
    X = rng.normal(size=(n, 11))
    X[:, -1] = 1.0
    y = rng.uniform(size=n)
    w0 = rng.normal(0, 0.01, size=11)
    return X, y, w0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--trajectories", type=int, default=2000)
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    rewards, offsets = returns_case(args.trajectories, rng)
    X, y, w0 = descent_case(args.samples, rng)

    cases = {
        f"discounted_returns_batch ({args.trajectories} trajectories)":
            lambda k: k.discounted_returns_batch(rewards, offsets, 0.9),
        f"gradient_descent ({args.samples}x11, {args.epochs} epochs)":
            lambda k: k.gradient_descent(X, y, w0, 0.05, 0.0, args.epochs),
    }

    backends = dict(sorted(kernels.BACKENDS.items()))
    print(f"active backend: {kernels.BACKEND}; timing: {', '.join(backends)}")
    if "cython" in backends:
        ref = kernels.BACKENDS["python"]
        fast = kernels.BACKENDS["cython"]
        assert np.allclose(ref.discounted_returns_batch(rewards, offsets, 0.9),
                           fast.discounted_returns_batch(rewards, offsets, 0.9), atol=1e-12)
        assert np.allclose(ref.gradient_descent(X, y, w0, 0.05, 0.0, 50)[0],
                           fast.gradient_descent(X, y, w0, 0.05, 0.0, 50)[0], atol=1e-12)

    for name, fn in cases.items():
        times = {}
        for bname, impl in backends.items():
            times[bname] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
        row = "  ".join(f"{b}={t * 1e3:9.2f} ms" for b, t in times.items())
        speedup = ""
        if "cython" in times and times["cython"] > 0:
            speedup = f"  speedup x{times['python'] / times['cython']:.1f}"
        print(f"{name:<48} {row}{speedup}")


if __name__ == "__main__":
    main()

"""Benchmark the compiled kernel backend against the numpy fallback.

Times the three hot operations of the training loop at their real
shapes: single-observation forward (action selection), batch forward
(TD targets) and the fused gradient+SGD step.

Run: python3 benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from gridrules.agent import init_network
from gridrules.kernels import numpy_backend

try:
    from gridrules.kernels import _mlp as cython_backend
except ImportError:
    cython_backend = None


def one_hot_batch(rng, n, dim=129, ones=27):
    x = np.zeros((n, dim))
    for i in range(n):
        x[i, rng.choice(dim, ones, replace=False)] = 1.0
    return x


def bench(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    net = init_network(0)
    x1 = one_hot_batch(rng, 1)
    x64 = one_hot_batch(rng, 64)
    actions = rng.integers(3, size=64)
    targets = rng.random(64)

    backends = [("numpy", numpy_backend)]
    if cython_backend is not None:
        backends.append(("cython", cython_backend))
    else:
        print("compiled backend not available; benchmarking numpy only")

    cases = [
        ("forward batch=1", lambda be: be.forward(net.params, x1)),
        ("forward batch=64", lambda be: be.forward(net.params, x64)),
        ("grad_step batch=64",
         lambda be: be.grad_step(net.params, x64, actions, targets, 0.0)),
    ]

    print(f"{'operation':<20} " +
          " ".join(f"{name:>12}" for name, _ in backends) +
          ("      speedup" if len(backends) == 2 else ""))
    for label, call in cases:
        times = [bench(lambda be=be: call(be), args.repeats)
                 for _, be in backends]
        row = f"{label:<20} " + " ".join(f"{t * 1e6:>10.1f}us" for t in times)
        if len(times) == 2:
            row += f"  {times[0] / times[1]:>10.2f}x"
        print(row)


if __name__ == "__main__":
    main()

"""Time the numba and numpy kernels on the planner's workloads.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the median wall time per call and per simulated step for each
backend, and checks that both backends return identical results.
"""
import argparse
import statistics
import time

import numpy as np

from uduc import _kernels
from uduc.env import CART_MASS, DT, GRAVITY, THETA_LIMIT, X_LIMIT


def _time(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--population", type=int, default=500)
    ap.add_argument("--particles", type=int, default=20)
    ap.add_argument("--horizon", type=int, default=15)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    B = 9
    m = 0.1 * np.exp(rng.uniform(-0.2, 0.2, B))
    l = np.exp(rng.uniform(-0.2, 0.2, B))
    actions = rng.uniform(-10, 10, (args.population, args.horizon))
    s0 = np.array([0.01, 0.0, 0.03, 0.0])
    noise = np.full(4, 0.01)
    states = rng.uniform(-0.2, 0.2, (100_000, 4))
    forces = rng.uniform(-10, 10, 100_000)

    def roll(impl):
        return _kernels.rollout_returns(s0, actions, m, l, noise, args.particles, np.uint64(12345), CART_MASS,
                                        GRAVITY, DT, 10.0, X_LIMIT, THETA_LIMIT, impl=impl)

    def step(impl):
        return _kernels.cartpole_step(states, forces, 0.1, 1.0, CART_MASS, GRAVITY, DT, 10.0, impl=impl)

    n_roll = args.population * args.particles * args.horizon
    print(f"{'kernel':<16}{'backend':<8}{'ms/call':>10}{'ns/step':>10}")
    results = {}
    for name, fn, n_steps in (("rollout_returns", roll, n_roll), ("cartpole_step", step, len(states))):
        for impl in ("numba", "numpy"):
            t = _time(lambda: fn(impl), args.repeat)
            results[(name, impl)] = fn(impl)
            print(f"{name:<16}{impl:<8}{t * 1e3:>10.2f}{t / n_steps * 1e9:>10.1f}")
        same = np.array_equal(results[(name, "numba")], results[(name, "numpy")])
        close = np.allclose(results[(name, "numba")], results[(name, "numpy")], rtol=0, atol=1e-12)
        print(f"  backends agree: {'exactly' if same else ('to 1e-12' if close else 'NO')}")


if __name__ == "__main__":
    main()

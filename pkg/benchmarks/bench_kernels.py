"""Compare the compiled and pure-Python selection kernels.

Times the two transdimensional sweeps in isolation and one full MCMC
iteration, per backend, on simulated data::

    python3 benchmarks/bench_kernels.py --n 600 --q 60 --reps 200
    python3 benchmarks/bench_kernels.py --n 466 --q 298 --p 3 --iters 200
"""
import argparse
import copy
import time

import numpy as np

from medpath import kernels
from medpath.sampler import (McmcConfig, initial_state, mcmc_step, update_gamma_tau,
                             update_omega_delta)
from medpath.simgen import ScenarioSpec, generate
from medpath.variants import build_priors


def _time(fn, reps):
    fn()
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return 1e3 * (time.perf_counter() - t0) / reps


def bench(data, priors, backend, reps, iters):
    cfg = McmcConfig(n_iter=max(iters, 1), backend=backend, seed=1)
    state = initial_state(data, priors, cfg, np.random.default_rng(1))
    # a few warm-up iterations so some indicators are on
    for _ in range(20):
        mcmc_step(state, data, priors, cfg)
    base = copy.deepcopy(state)

    s = copy.deepcopy(base)
    gamma_ms = _time(lambda: update_gamma_tau(s, data, priors, backend=backend), reps)
    s = copy.deepcopy(base)
    omega_ms = _time(lambda: update_omega_delta(s, data, priors, backend=backend), reps)
    s = copy.deepcopy(base)
    iter_ms = _time(lambda: mcmc_step(s, data, priors, cfg), iters)
    return gamma_ms, omega_ms, iter_ms


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="I")
    ap.add_argument("--n", type=int, default=600)
    ap.add_argument("--q", type=int, default=60)
    ap.add_argument("--p", type=int, default=None, help="3 selects the Scenario V layout")
    ap.add_argument("--reps", type=int, default=200, help="sweeps timed per kernel")
    ap.add_argument("--iters", type=int, default=200, help="full iterations timed")
    args = ap.parse_args()

    scenario = "II" if args.p == 3 else args.scenario
    kw = {"loadings": (0.5, 0.2, 0.7), "p": 3} if args.p == 3 else {}
    spec = ScenarioSpec.make(scenario, n=args.n, q=args.q, replicates=1, **kw)
    data, _ = generate(spec, 0)
    priors = build_priors(data, "mvn-ib-ssb")

    impls = kernels.implementations()
    print(f"n={data.n} q={data.q} p={data.p} family={data.family.value}")
    print(f"{'backend':<8}{'gamma sweep ms':>16}{'omega sweep ms':>16}{'iteration ms':>14}")
    results = {}
    for name in ("cython", "python"):
        if name not in impls:
            print(f"{name:<8}{'not built':>16}")
            continue
        results[name] = bench(data, priors, name, args.reps, args.iters)
        g, o, it = results[name]
        print(f"{name:<8}{g:>16.3f}{o:>16.3f}{it:>14.3f}")
    if len(results) == 2:
        ratio = [p / c for c, p in zip(results["cython"], results["python"])]
        print(f"{'speedup':<8}{ratio[0]:>15.1f}x{ratio[1]:>15.1f}x{ratio[2]:>13.1f}x")


if __name__ == "__main__":
    main()

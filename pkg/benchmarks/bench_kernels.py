"""Time the numba learner loops against the pure-numpy path.

    python3 benchmarks/bench_kernels.py --steps 20000

Both paths consume identical pre-drawn samples, so the final values are also
compared. The numba timings exclude the first (compiling) call.
"""
import argparse
import time

import numpy as np

from osvilab import kernels
from osvilab.envs import build_cliffwalk
from osvilab.learners import ModelBuilder, run_model_learner, run_q_learning, run_td


def _time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    mdp, pi = build_cliffwalk()
    n = args.steps
    cases = {
        "osdyna control": lambda nb: run_model_learner(mdp, n, 0, builder=ModelBuilder(lam=0.5), use_numba=nb),
        "osdyna pe": lambda nb: run_model_learner(mdp, n, 0, builder=ModelBuilder(lam=0.5), mode="pe",
                                                  policy=pi, use_numba=nb),
        "dyna control": lambda nb: run_model_learner(mdp, n, 0, "dyna", builder=ModelBuilder(lam=0.5),
                                                     use_numba=nb),
        "q-learning": lambda nb: run_q_learning(mdp, n, 0, use_numba=nb),
        "td": lambda nb: run_td(mdp, pi, n, 0, use_numba=nb),
    }
    print(f"{'case':<16}{'numpy s':>10}{'numba s':>10}{'speedup':>10}{'max |dV|':>12}")
    for name, fn in cases.items():
        fn(True)  # compile
        t_nb, run_nb = _time(lambda: fn(True), args.repeat)
        t_np, run_np = _time(lambda: fn(False), 1)
        dv = np.max(np.abs(run_nb.state.value - run_np.state.value))
        print(f"{name:<16}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>10.1f}{dv:>12.1e}")

    rng = np.random.default_rng(0)
    P = rng.random((50, 4, 50))
    P /= P.sum(axis=-1, keepdims=True)
    R = rng.random((50, 4))
    pi0 = np.zeros(50, dtype=np.int64)
    kernels.control_solve_nb(P, R, 0.99, pi0)
    t_np, _ = _time(lambda: kernels.control_solve_np(P, R, 0.99, pi0), args.repeat)
    t_nb, _ = _time(lambda: kernels.control_solve_nb(P, R, 0.99, pi0), args.repeat)
    print(f"{'control solve':<16}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()

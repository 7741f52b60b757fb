#!/usr/bin/env python3
"""Benchmark the numba HMM kernels against the pure-numpy fallbacks.

Runs the forward/backward recursions, Viterbi, and transition posterior
accumulation on problem sizes matching real decoding (16 states, 50-500
frame sequences) and prints per-kernel speedups. The same comparison can
be forced end to end by setting SPARSEASR_NUMBA=0 for a full run.

Usage: python benchmarks/bench_kernels.py [--repeats 50]
"""

import argparse
import time

import numpy as np
from scipy.special import logsumexp

from sparseasr import accel


def make_problem(rng, n_states, n_frames):
    a = np.zeros((n_states, n_states))
    for q in range(n_states - 1):
        stay = rng.uniform(0.4, 0.8)
        a[q, q] = stay
        a[q, q + 1] = 1 - stay
    a[-1, -1] = 1.0
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
    log_pi = np.full(n_states, -np.inf)
    log_pi[0] = 0.0
    log_b = rng.uniform(-40.0, -1.0, (n_frames, n_states))
    return log_pi, log_a, log_b


def time_fn(fn, args_list, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for args in args_list:
            fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--states", type=int, default=16)
    parser.add_argument("--frames", type=int, nargs="+", default=[50, 200, 500])
    args = parser.parse_args()

    if not accel.HAVE_NUMBA:
        print("numba not importable; nothing to compare")
        return

    rng = np.random.default_rng(0)
    print(f"states={args.states}, sequence lengths={args.frames}, "
          f"best of {args.repeats} runs\n")
    header = f"{'kernel':<12} {'frames':>6} {'numpy':>12} {'numba':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))

    for t in args.frames:
        problems = [make_problem(rng, args.states, t) for _ in range(8)]
        fwd_args = problems
        bwd_args = [(a, b) for (_, a, b) in problems]
        xi_args = []
        for (pi, a, b) in problems:
            alpha = accel.forward_np(pi, a, b)
            beta = accel.backward_np(a, b)
            ll = logsumexp(alpha[-1])
            xi_args.append((alpha, beta, a, b, ll))

        pairs = [
            ("forward", accel.forward_np, accel.forward_nb, fwd_args),
            ("backward", accel.backward_np, accel.backward_nb, bwd_args),
            ("viterbi", accel.viterbi_np, accel.viterbi_nb, fwd_args),
            ("xi_sum", accel.xi_sum_np, accel.xi_sum_nb, xi_args),
        ]
        for name, np_fn, nb_fn, call_args in pairs:
            nb_fn(*call_args[0])  # compile before timing
            t_np = time_fn(np_fn, call_args, args.repeats)
            t_nb = time_fn(nb_fn, call_args, args.repeats)
            print(f"{name:<12} {t:>6} {t_np * 1e3:>10.2f}ms {t_nb * 1e3:>10.2f}ms "
                  f"{t_np / t_nb:>8.1f}x")
        print()


if __name__ == "__main__":
    main()

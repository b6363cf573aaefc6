"""Benchmark the compiled Viterbi kernel against the numpy fallback.

Usage: python benchmarks/bench_viterbi.py
"""

import time

import numpy as np

from digitvec._kernels import BACKEND
from digitvec._kernels.viterbi_np import viterbi_path as viterbi_numpy

try:
    from digitvec._kernels._viterbi_cy import viterbi_path as viterbi_cython
except ImportError:
    viterbi_cython = None


def make_case(rng, n_frames, n_states):
    emit = rng.standard_normal((n_frames, n_states))
    log_stay = np.log(np.full(n_states, 0.5))
    log_adv = np.log(np.full(n_states, 0.5))
    return emit, log_stay, log_adv


def bench(fn, cases, repeats=5):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        for emit, log_stay, log_adv in cases:
            fn(emit, log_stay, log_adv)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"active backend: {BACKEND}")
    if viterbi_cython is None:
        print("compiled kernel unavailable; benchmarking numpy fallback only")
    header = f"{'frames':>8} {'states':>7} {'numpy ms':>10}"
    if viterbi_cython is not None:
        header += f" {'cython ms':>10} {'speedup':>8}"
    print(header)
    for n_frames, n_states in ((120, 40), (500, 80), (2000, 160), (8000, 320)):
        cases = [make_case(rng, n_frames, n_states) for _ in range(20)]
        t_np = bench(viterbi_numpy, cases)
        line = f"{n_frames:>8} {n_states:>7} {1e3 * t_np:>10.2f}"
        if viterbi_cython is not None:
            path_np, score_np = viterbi_numpy(*cases[0])
            path_cy, score_cy = viterbi_cython(*cases[0])
            assert np.array_equal(path_np, path_cy) and score_np == score_cy
            t_cy = bench(viterbi_cython, cases)
            line += f" {1e3 * t_cy:>10.2f} {t_np / t_cy:>7.1f}x"
        print(line)


if __name__ == "__main__":
    main()

"""Timing comparison of the kernel backends.

Runs each lattice kernel on one synthetic problem under both the numba
and the pure-numpy backend and prints the mean wall time per call.
Invoke from the repository root:

    python3 benchmarks/bench_kernels.py --states 20 --frames 400
"""

import argparse
import time

import numpy as np

from hmm2kit import kernels
from hmm2kit.inference import final_log_term, log_parameters
from hmm2kit.model import log_emission_matrix, new_left_right


def build_problem(num_states, num_frames, obs_dim, seed):
    rng = np.random.default_rng(seed)
    model = new_left_right(num_states, obs_dim)
    frames = rng.normal(0.0, 1.0, size=(num_frames, obs_dim))
    log_pi, log_a2, log_a3 = log_parameters(model)
    log_b = log_emission_matrix(model, frames)
    term = final_log_term(model)
    final_mask = model.final_state_mask()
    return log_pi, log_a2, log_a3, log_b, term, final_mask


def time_call(fn, repeats):
    fn()  # absorb JIT compilation and cache effects
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_backend(name, problem, repeats):
    log_pi, log_a2, log_a3, log_b, term, final_mask = problem
    kernels.set_backend(name)
    alpha = kernels.forward_lattice(log_pi, log_a2, log_a3, log_b)
    beta = kernels.backward_lattice(log_a3, log_b, term)
    from scipy.special import logsumexp

    log_norm = float(logsumexp(alpha[-1] + term[None, :]))
    calls = {
        "forward": lambda: kernels.forward_lattice(log_pi, log_a2, log_a3, log_b),
        "backward": lambda: kernels.backward_lattice(log_a3, log_b, term),
        "viterbi": lambda: kernels.viterbi_path(
            log_pi, log_a2, log_a3, log_b, final_mask
        ),
        "posteriors": lambda: kernels.eta_sums(alpha, beta, log_a3, log_b, log_norm),
    }
    return {label: time_call(fn, repeats) for label, fn in calls.items()}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--states", type=int, default=20)
    parser.add_argument("--frames", type=int, default=400)
    parser.add_argument("--dims", type=int, default=8)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    problem = build_problem(args.states, args.frames, args.dims, args.seed)
    previous = kernels.active_backend()
    try:
        results = {
            name: bench_backend(name, problem, args.repeats)
            for name in kernels.available_backends()
        }
    finally:
        kernels.set_backend(previous)

    print(
        f"states={args.states} frames={args.frames} dims={args.dims} "
        f"repeats={args.repeats}"
    )
    names = list(results)
    header = f"{'kernel':<12}" + "".join(f"{n + ' (ms)':>14}" for n in names)
    if len(names) == 2:
        header += f"{'ratio':>10}"
    print(header)
    for label in ("forward", "backward", "viterbi", "posteriors"):
        row = f"{label:<12}"
        values = [results[n][label] for n in names]
        row += "".join(f"{v * 1e3:>14.3f}" for v in values)
        if len(values) == 2 and values[0] > 0:
            row += f"{values[1] / values[0]:>10.1f}x"
        print(row)


if __name__ == "__main__":
    main()

"""Numba twins of the lattice kernels.

Same contracts as _kernels_numpy; see that module for the conventions.
Compiled lazily on first call, with on-disk caching so later processes
skip compilation.  fastmath stays off, the scores must be bitwise stable
across runs and match the numpy ordering semantics.
"""

import math

import numpy as np
from numba import njit

NEG_INF = float("-inf")


@njit(cache=True)
def forward_lattice(log_pi, log_a2, log_a3, log_b):
    num_frames, n = log_b.shape
    alpha = np.empty((num_frames - 1, n, n))
    for j in range(n):
        base = log_pi[j] + log_b[0, j]
        for k in range(n):
            alpha[0, j, k] = base + log_a2[j, k] + log_b[1, k]
    for frame in range(2, num_frames):
        r = frame - 1
        for j in range(n):
            for k in range(n):
                high = NEG_INF
                for i in range(n):
                    v = alpha[r - 1, i, j] + log_a3[i, j, k]
                    if v > high:
                        high = v
                if high == NEG_INF:
                    alpha[r, j, k] = NEG_INF
                else:
                    acc = 0.0
                    for i in range(n):
                        acc += math.exp(alpha[r - 1, i, j] + log_a3[i, j, k] - high)
                    alpha[r, j, k] = high + math.log(acc) + log_b[frame, k]
    return alpha


@njit(cache=True)
def backward_lattice(log_a3, log_b, log_term):
    num_frames, n = log_b.shape
    beta = np.empty((num_frames - 1, n, n))
    for i in range(n):
        for j in range(n):
            beta[num_frames - 2, i, j] = log_term[j]
    for r in range(num_frames - 3, -1, -1):
        for i in range(n):
            for j in range(n):
                high = NEG_INF
                for k in range(n):
                    v = beta[r + 1, j, k] + log_a3[i, j, k] + log_b[r + 2, k]
                    if v > high:
                        high = v
                if high == NEG_INF:
                    beta[r, i, j] = NEG_INF
                else:
                    acc = 0.0
                    for k in range(n):
                        acc += math.exp(
                            beta[r + 1, j, k] + log_a3[i, j, k] + log_b[r + 2, k] - high
                        )
                    beta[r, i, j] = high + math.log(acc)
    return beta


@njit(cache=True)
def viterbi_path(log_pi, log_a2, log_a3, log_b, final_mask):
    num_frames, n = log_b.shape
    prev = np.empty((n, n))
    cur = np.empty((n, n))
    for j in range(n):
        base = log_pi[j] + log_b[0, j]
        for k in range(n):
            prev[j, k] = base + log_a2[j, k] + log_b[1, k]
    back = np.zeros((num_frames - 2, n, n), dtype=np.int64)
    for frame in range(2, num_frames):
        for j in range(n):
            for k in range(n):
                high = NEG_INF
                arg = 0
                for i in range(n):
                    v = prev[i, j] + log_a3[i, j, k]
                    if v > high:
                        high = v
                        arg = i
                back[frame - 2, j, k] = arg
                cur[j, k] = high + log_b[frame, k]
        tmp = prev
        prev = cur
        cur = tmp
    best = NEG_INF
    best_j = 0
    best_k = 0
    for j in range(n):
        for k in range(n):
            if final_mask[k] and prev[j, k] > best:
                best = prev[j, k]
                best_j = j
                best_k = k
    path = np.empty(num_frames, dtype=np.int64)
    path[num_frames - 2] = best_j
    path[num_frames - 1] = best_k
    for frame in range(num_frames - 1, 1, -1):
        path[frame - 2] = back[frame - 2, path[frame - 1], path[frame]]
    return path, best


@njit(cache=True)
def eta_sums(alpha, beta, log_a3, log_b, log_norm):
    rows = alpha.shape[0]
    n = alpha.shape[1]
    num_frames = rows + 1
    eta_sum = np.zeros((n, n, n))
    xi_sum = np.zeros((n, n))
    xi_first = np.zeros((n, n))
    occupancy = np.zeros((num_frames, n))
    for r in range(num_frames - 2):
        is_last = r == num_frames - 3
        for i in range(n):
            for j in range(n):
                pair_total = 0.0
                for k in range(n):
                    e = math.exp(
                        alpha[r, i, j]
                        + log_a3[i, j, k]
                        + log_b[r + 2, k]
                        + beta[r + 1, j, k]
                        - log_norm
                    )
                    eta_sum[i, j, k] += e
                    pair_total += e
                    if is_last:
                        occupancy[num_frames - 2, j] += e
                        occupancy[num_frames - 1, k] += e
                xi_sum[i, j] += pair_total
                occupancy[r, i] += pair_total
                if r == 0:
                    xi_first[i, j] = pair_total
    return eta_sum, xi_sum, xi_first, occupancy

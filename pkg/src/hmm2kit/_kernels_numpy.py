"""Pure numpy lattice kernels.

Reference implementations of the hot recursions, vectorized over states.
The numba twins in _kernels_numba.py compute the same quantities with
explicit loops; both share these conventions:

  - log_b is the (T, N) matrix of log emission densities.
  - lattices have T-1 slices; slice r covers the state pair at frames
    (r, r+1), so slice 0 is the two-frame startup and slice T-2 the end.
  - forbidden transitions arrive as -inf log probabilities and are never
    smoothed.

Viterbi accumulates scores in a fixed left-to-right order (start term,
then alternating transition and emission terms) so the winning score is
bitwise reproducible against a sequential per-path evaluation.
"""

import numpy as np
from scipy.special import logsumexp


def forward_lattice(log_pi, log_a2, log_a3, log_b):
    """Forward sums over the state-pair lattice, shape (T-1, N, N)."""
    num_frames, n = log_b.shape
    alpha = np.empty((num_frames - 1, n, n))
    alpha[0] = (log_pi + log_b[0])[:, None] + log_a2 + log_b[1][None, :]
    for frame in range(2, num_frames):
        scores = alpha[frame - 2][:, :, None] + log_a3
        alpha[frame - 1] = logsumexp(scores, axis=0) + log_b[frame][None, :]
    return alpha


def backward_lattice(log_a3, log_b, log_term):
    """Backward sums; log_term sets the final slice by ending state."""
    num_frames, n = log_b.shape
    beta = np.empty((num_frames - 1, n, n))
    beta[num_frames - 2] = log_term[None, :]
    for r in range(num_frames - 3, -1, -1):
        trailing = beta[r + 1] + log_b[r + 2][None, :]
        beta[r] = logsumexp(log_a3 + trailing[None, :, :], axis=2)
    return beta


def viterbi_path(log_pi, log_a2, log_a3, log_b, final_mask):
    """Best admissible path ending in a final state.

    Returns (path, score) where path has one state index per frame and
    score is -inf when no admissible path exists.  Ties prefer the lowest
    predecessor index and the lexicographically lowest terminal pair.
    """
    num_frames, n = log_b.shape
    delta = (log_pi + log_b[0])[:, None] + log_a2 + log_b[1][None, :]
    back = np.zeros((num_frames - 2, n, n), dtype=np.int64)
    for frame in range(2, num_frames):
        scores = delta[:, :, None] + log_a3
        back[frame - 2] = scores.argmax(axis=0)
        delta = scores.max(axis=0) + log_b[frame][None, :]
    terminal = np.where(final_mask[None, :], delta, -np.inf)
    flat = int(terminal.argmax())
    score = float(terminal.flat[flat])
    path = np.empty(num_frames, dtype=np.int64)
    path[num_frames - 2], path[num_frames - 1] = divmod(flat, n)
    for frame in range(num_frames - 1, 1, -1):
        path[frame - 2] = back[frame - 2, path[frame - 1], path[frame]]
    return path, score


def eta_sums(alpha, beta, log_a3, log_b, log_norm):
    """Posterior transition-triple sums and per-frame state occupancy.

    Returns (eta_sum, xi_sum, xi_first, occupancy):
      eta_sum   (N, N, N)  triple posteriors summed over their T-2 positions
      xi_sum    (N, N)     pair posteriors summed over the same positions
      xi_first  (N, N)     pair posterior of the first two frames
      occupancy (T, N)     per-frame state posterior, rows sum to 1

    Frames 0..T-3 of occupancy come from the leading slot of the pair
    posteriors; the last two frames come from the middle and trailing
    slots of the final triple posterior, so every frame is covered.
    """
    rows, n, _ = alpha.shape
    num_frames = rows + 1
    eta_sum = np.zeros((n, n, n))
    xi_sum = np.zeros((n, n))
    xi_first = np.zeros((n, n))
    occupancy = np.zeros((num_frames, n))
    for r in range(num_frames - 2):
        logs = (
            alpha[r][:, :, None]
            + log_a3
            + log_b[r + 2][None, None, :]
            + beta[r + 1][None, :, :]
            - log_norm
        )
        eta_t = np.exp(logs)
        eta_sum += eta_t
        xi_t = eta_t.sum(axis=2)
        xi_sum += xi_t
        occupancy[r] = xi_t.sum(axis=1)
        if r == 0:
            xi_first = xi_t
        if r == num_frames - 3:
            occupancy[num_frames - 2] = eta_t.sum(axis=(0, 2))
            occupancy[num_frames - 1] = eta_t.sum(axis=(0, 1))
    return eta_sum, xi_sum, xi_first, occupancy

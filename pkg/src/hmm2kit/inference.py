"""Exact lattice inference over state pairs.

The second-order recursions run on the product space of adjacent state
pairs, so every lattice here is indexed (slice, state, state) with slice
r covering frames r and r+1.  Accessors translate between slice indices
and the one-based frame times used in the recursions' usual notation,
where the lattice is defined for times 2 through T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .exceptions import DecodeFailureError, NumericError, ValidationError
from .model import Hmm2Model, ObservationSequence, log_emission_matrix

LATTICE_ROLES = ("viterbi", "forward", "backward")


@dataclass(frozen=True)
class TransitionLattice:
    """Log-domain lattice over state pairs for one sequence.

    values[r, x, y] covers frames r and r+1; for forward and viterbi
    roles the pair (x, y) is the states at those two frames, for the
    backward role it is the conditioning pair of the tail sum.
    """

    values: np.ndarray
    role: str

    def __post_init__(self):
        if self.role not in LATTICE_ROLES:
            raise ValidationError(f"unknown lattice role {self.role!r}")
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or values.shape[1] != values.shape[2]:
            raise ValidationError("lattice values must be (T-1, N, N)")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def num_frames(self) -> int:
        return self.values.shape[0] + 1

    @property
    def num_states(self) -> int:
        return self.values.shape[1]

    def at_time(self, t: int) -> np.ndarray:
        """Slice for one-based time t in [2, T]."""
        if not 2 <= t <= self.num_frames:
            raise ValidationError(f"time {t} outside [2, {self.num_frames}]")
        return self.values[t - 2]


@dataclass(frozen=True)
class DecodedPath:
    """Best state path for one sequence with its log joint score."""

    states: np.ndarray
    log_joint: float

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def num_frames(self) -> int:
        return self.states.shape[0]


def _check_dims(model: Hmm2Model, seq: ObservationSequence) -> None:
    if seq.num_channels != model.obs_dim:
        raise ValidationError(
            f"sequence has {seq.num_channels} channels, model expects {model.obs_dim}"
        )


def log_parameters(model: Hmm2Model):
    """Model parameters in log domain; zeros become -inf, never smoothed."""
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.initial)
        log_a2 = np.log(model.first_transitions)
        log_a3 = np.log(model.transitions)
    return log_pi, log_a2, log_a3


def final_log_term(model: Hmm2Model) -> np.ndarray:
    """Log terminal weights: 0 for final states, -inf elsewhere."""
    term = np.full(model.num_states, -np.inf)
    term[list(model.final_states)] = 0.0
    return term


def viterbi_decode(model: Hmm2Model, seq: ObservationSequence) -> DecodedPath:
    """Most likely state path ending in a final state.

    Raises DecodeFailureError when no admissible path has nonzero
    probability.  Ties break toward the lowest predecessor index and the
    lexicographically lowest terminal pair, so decodes are repeatable.
    """
    _check_dims(model, seq)
    log_pi, log_a2, log_a3 = log_parameters(model)
    log_b = log_emission_matrix(model, seq.frames)
    path, score = kernels.viterbi_path(
        log_pi, log_a2, log_a3, log_b, model.final_state_mask()
    )
    if not np.isfinite(score):
        raise DecodeFailureError(
            "no admissible path reaches a final state for this sequence"
        )
    return DecodedPath(states=path, log_joint=float(score))


def forward(model: Hmm2Model, seq: ObservationSequence):
    """Forward lattice and total log-likelihood of the sequence.

    The likelihood sums the last slice over pairs whose ending state is
    final.  Raises NumericError when a slice loses all mass or when no
    mass reaches a final state.
    """
    _check_dims(model, seq)
    log_pi, log_a2, log_a3 = log_parameters(model)
    log_b = log_emission_matrix(model, seq.frames)
    alpha = kernels.forward_lattice(log_pi, log_a2, log_a3, log_b)
    slice_mass = logsumexp(alpha, axis=(1, 2))
    if not np.all(np.isfinite(slice_mass)):
        dead = int(np.argmin(np.isfinite(slice_mass)))
        raise NumericError(f"forward mass vanished at lattice slice {dead}")
    log_likelihood = float(logsumexp(alpha[-1] + final_log_term(model)[None, :]))
    if not np.isfinite(log_likelihood):
        raise NumericError("no forward mass reaches a final state")
    return TransitionLattice(values=alpha, role="forward"), log_likelihood


def backward(model: Hmm2Model, seq: ObservationSequence) -> TransitionLattice:
    """Backward lattice with the conventional all-ones final slice."""
    _check_dims(model, seq)
    _, _, log_a3 = log_parameters(model)
    log_b = log_emission_matrix(model, seq.frames)
    beta = kernels.backward_lattice(log_a3, log_b, np.zeros(model.num_states))
    lattice = TransitionLattice(values=beta, role="backward")
    slice_mass = logsumexp(beta, axis=(1, 2))
    if not np.all(np.isfinite(slice_mass)):
        dead = int(np.argmin(np.isfinite(slice_mass)))
        raise NumericError(f"backward mass vanished at lattice slice {dead}")
    return lattice

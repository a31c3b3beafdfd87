"""Shared fixtures and independent oracles.

The oracles deliberately avoid the lattice code: path enumeration walks
every state sequence and evaluates the joint probability term by term,
in the same left-to-right accumulation order the kernels use, so Viterbi
scores can be compared bitwise and forward scores to tight tolerances.
"""

import itertools
import math

import numpy as np
import pytest
from scipy.special import logsumexp

from hmm2kit import kernels
from hmm2kit.inference import final_log_term, log_parameters
from hmm2kit.model import (
    Hmm2Model,
    ObservationSequence,
    left_right_mask,
    log_emission_matrix,
    single_gaussian,
)


def random_model(rng, num_states=None, obs_dim=None, left_right=False):
    """Random valid model: full or left-right topology, unit mixtures."""
    n = int(num_states if num_states is not None else rng.integers(2, 5))
    d = int(obs_dim if obs_dim is not None else rng.integers(1, 3))
    if left_right:
        mask = left_right_mask(n)
        initial = np.zeros(n)
        initial[0] = 1.0
        finals = (n - 1,)
    else:
        mask = np.ones((n, n, n), dtype=bool)
        initial = rng.dirichlet(np.ones(n))
        picked = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
        finals = tuple(sorted(int(s) for s in picked))
    transitions = np.zeros((n, n, n))
    for i in range(n):
        for j in range(n):
            allowed = np.flatnonzero(mask[i, j])
            if allowed.size:
                transitions[i, j, allowed] = rng.dirichlet(np.ones(allowed.size))
    first_mask = mask.any(axis=0)
    first = np.zeros((n, n))
    for j in range(n):
        allowed = np.flatnonzero(first_mask[j])
        first[j, allowed] = rng.dirichlet(np.ones(allowed.size))
    emissions = tuple(
        single_gaussian(rng.normal(0.0, 3.0, size=d), rng.uniform(0.4, 2.0, size=d))
        for _ in range(n)
    )
    return Hmm2Model(
        num_states=n,
        initial=initial,
        first_transitions=first,
        transitions=transitions,
        emissions=emissions,
        topology_mask=mask,
        final_states=finals,
    )


def random_sequence(rng, num_frames, obs_dim):
    return ObservationSequence(frames=rng.normal(0.0, 2.0, size=(num_frames, obs_dim)))


def single_state_model(obs_dim=1):
    return Hmm2Model(
        num_states=1,
        initial=np.array([1.0]),
        first_transitions=np.array([[1.0]]),
        transitions=np.ones((1, 1, 1)),
        emissions=(single_gaussian(np.zeros(obs_dim), np.ones(obs_dim)),),
        topology_mask=np.ones((1, 1, 1), dtype=bool),
        final_states=(0,),
    )


def path_score(path, log_pi, log_a2, log_a3, log_b):
    """Joint log probability of (path, frames), accumulated left to right.

    The operation order mirrors the kernels exactly so that equal paths
    produce bitwise equal scores.
    """
    score = log_pi[path[0]] + log_b[0, path[0]]
    score = score + log_a2[path[0], path[1]]
    score = score + log_b[1, path[1]]
    for t in range(2, len(path)):
        score = score + log_a3[path[t - 2], path[t - 1], path[t]]
        score = score + log_b[t, path[t]]
    return score


def _path_terms(model, frames):
    log_pi, log_a2, log_a3 = log_parameters(model)
    log_b = log_emission_matrix(model, frames)
    return log_pi, log_a2, log_a3, log_b


def brute_force_viterbi(model, frames):
    """Exhaustive max over all final-ending paths; first best wins ties."""
    log_pi, log_a2, log_a3, log_b = _path_terms(model, frames)
    finals = set(model.final_states)
    best_score = -math.inf
    best_path = None
    for path in itertools.product(range(model.num_states), repeat=len(frames)):
        if path[-1] not in finals:
            continue
        score = path_score(path, log_pi, log_a2, log_a3, log_b)
        if score > best_score:
            best_score = score
            best_path = path
    return best_path, best_score


def brute_force_log_likelihood(model, frames):
    """Exhaustive sum over all final-ending paths."""
    log_pi, log_a2, log_a3, log_b = _path_terms(model, frames)
    finals = set(model.final_states)
    scores = [
        path_score(path, log_pi, log_a2, log_a3, log_b)
        for path in itertools.product(range(model.num_states), repeat=len(frames))
        if path[-1] in finals
    ]
    return float(logsumexp(scores))


def sample_path(rng, model, num_frames):
    states = [int(rng.choice(model.num_states, p=model.initial))]
    states.append(
        int(rng.choice(model.num_states, p=model.first_transitions[states[0]]))
    )
    for _ in range(2, num_frames):
        row = model.transitions[states[-2], states[-1]]
        states.append(int(rng.choice(model.num_states, p=row)))
    return states


def sample_sequence(rng, model, num_frames):
    """Draw (path, frames) from the model's own generative process."""
    states = sample_path(rng, model, num_frames)
    frames = np.empty((num_frames, model.obs_dim))
    for t, state in enumerate(states):
        component = model.emissions[state].components[0]
        chol = np.linalg.cholesky(component.covariance)
        frames[t] = component.mean + chol @ rng.normal(size=model.obs_dim)
    return states, ObservationSequence(frames=frames)


@pytest.fixture(scope="session", autouse=True)
def warm_backend():
    """Trigger any JIT compilation before timed tests run."""
    rng = np.random.default_rng(0)
    model = random_model(rng, num_states=2, obs_dim=1)
    seq = random_sequence(rng, 4, 1)
    log_pi, log_a2, log_a3, log_b = _path_terms(model, seq.frames)
    term = final_log_term(model)
    kernels.viterbi_path(log_pi, log_a2, log_a3, log_b, model.final_state_mask())
    alpha = kernels.forward_lattice(log_pi, log_a2, log_a3, log_b)
    beta = kernels.backward_lattice(log_a3, log_b, term)
    kernels.eta_sums(alpha, beta, log_a3, log_b, 0.0)
    return kernels.active_backend()

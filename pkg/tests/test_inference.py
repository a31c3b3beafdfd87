"""Viterbi, forward, backward against enumeration and hand oracles."""

import math

import numpy as np
import pytest
from scipy.special import logsumexp

from hmm2kit.exceptions import DecodeFailureError, NumericError, ValidationError
from hmm2kit.inference import (
    TransitionLattice,
    backward,
    forward,
    log_parameters,
    viterbi_decode,
)
from hmm2kit.model import (
    Hmm2Model,
    ObservationSequence,
    left_right_mask,
    log_emission_matrix,
    new_left_right,
    single_gaussian,
)

from conftest import (
    brute_force_log_likelihood,
    brute_force_viterbi,
    path_score,
    random_model,
    random_sequence,
    sample_path,
)


def _single_state_model():
    return Hmm2Model(
        num_states=1,
        initial=np.array([1.0]),
        first_transitions=np.array([[1.0]]),
        transitions=np.ones((1, 1, 1)),
        emissions=(single_gaussian([0.0], [1.0]),),
        topology_mask=np.ones((1, 1, 1), dtype=bool),
        final_states=(0,),
    )


def _no_self_loop_left_right(num_states):
    """Left-right chain whose only allowed move is advance by one."""
    n = num_states
    mask = np.zeros((n, n, n), dtype=bool)
    transitions = np.zeros((n, n, n))
    for i in range(n):
        for j in range(n):
            k = min(j + 1, n - 1)
            mask[i, j, k] = True
            transitions[i, j, k] = 1.0
    first = np.zeros((n, n))
    for j in range(n):
        first[j, min(j + 1, n - 1)] = 1.0
    emissions = tuple(single_gaussian([float(s)], [1.0]) for s in range(n))
    return Hmm2Model(
        num_states=n,
        initial=np.eye(n)[0],
        first_transitions=first,
        transitions=transitions,
        emissions=emissions,
        topology_mask=mask,
        final_states=(n - 1,),
    )


def _uniform_all_final_model(num_states, obs_dim):
    """Every path has identical probability; every state is final."""
    n = num_states
    emissions = tuple(single_gaussian(np.zeros(obs_dim), np.ones(obs_dim)) for _ in range(n))
    return Hmm2Model(
        num_states=n,
        initial=np.full(n, 1.0 / n),
        first_transitions=np.full((n, n), 1.0 / n),
        transitions=np.full((n, n, n), 1.0 / n),
        emissions=emissions,
        topology_mask=np.ones((n, n, n), dtype=bool),
        final_states=tuple(range(n)),
    )


def test_single_state_path_and_score():
    model = _single_state_model()
    rng = np.random.default_rng(3)
    seq = random_sequence(rng, 6, 1)
    decoded = viterbi_decode(model, seq)
    np.testing.assert_array_equal(decoded.states, np.zeros(6, dtype=np.int64))
    expected = float(log_emission_matrix(model, seq.frames)[:, 0].sum())
    assert decoded.log_joint == pytest.approx(expected, rel=1e-12)


def test_forced_advance_path():
    model = _no_self_loop_left_right(4)
    rng = np.random.default_rng(4)
    seq = random_sequence(rng, 4, 1)
    decoded = viterbi_decode(model, seq)
    np.testing.assert_array_equal(decoded.states, [0, 1, 2, 3])


@pytest.mark.parametrize("seed", range(12))
def test_viterbi_matches_enumeration_bitwise(seed):
    rng = np.random.default_rng(100 + seed)
    model = random_model(rng)
    seq = random_sequence(rng, int(rng.integers(2, 7)), model.obs_dim)
    decoded = viterbi_decode(model, seq)
    oracle_path, oracle_score = brute_force_viterbi(model, seq.frames)
    np.testing.assert_array_equal(decoded.states, oracle_path)
    assert decoded.log_joint == oracle_score


@pytest.mark.parametrize("seed", range(12))
def test_forward_matches_enumeration(seed):
    rng = np.random.default_rng(200 + seed)
    model = random_model(rng)
    seq = random_sequence(rng, int(rng.integers(2, 7)), model.obs_dim)
    _, ll = forward(model, seq)
    oracle = brute_force_log_likelihood(model, seq.frames)
    assert ll == pytest.approx(oracle, rel=1e-9)


def test_forward_constant_emission_collapse():
    model = _uniform_all_final_model(3, 2)
    frame = np.array([0.3, -1.2])
    seq = ObservationSequence(frames=np.tile(frame, (5, 1)))
    _, ll = forward(model, seq)
    per_frame = float(model.emissions[0].log_density(frame[None, :])[0])
    assert ll == pytest.approx(5 * per_frame, rel=1e-12)


def test_forward_two_frames_is_direct_sum():
    rng = np.random.default_rng(11)
    model = random_model(rng, num_states=3, obs_dim=1)
    seq = random_sequence(rng, 2, 1)
    _, ll = forward(model, seq)
    log_pi, log_a2, _ = log_parameters(model)
    log_b = log_emission_matrix(model, seq.frames)
    terms = [
        log_pi[j] + log_b[0, j] + log_a2[j, k] + log_b[1, k]
        for j in range(3)
        for k in model.final_states
    ]
    assert ll == pytest.approx(float(logsumexp(terms)), rel=1e-12)


def test_backward_terminal_slice_is_log_one():
    rng = np.random.default_rng(12)
    model = random_model(rng)
    seq = random_sequence(rng, 5, model.obs_dim)
    lattice = backward(model, seq)
    np.testing.assert_array_equal(lattice.values[-1], np.zeros_like(lattice.values[-1]))


def test_backward_hand_expansion_two_states():
    rng = np.random.default_rng(13)
    model = random_model(rng, num_states=2, obs_dim=1)
    seq = random_sequence(rng, 3, 1)
    lattice = backward(model, seq)
    _, _, log_a3 = log_parameters(model)
    log_b = log_emission_matrix(model, seq.frames)
    for i in range(2):
        for j in range(2):
            expected = logsumexp([log_a3[i, j, k] + log_b[2, k] for k in range(2)])
            assert lattice.values[0][i, j] == pytest.approx(float(expected), rel=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_forward_backward_mass_constant_over_time(seed):
    rng = np.random.default_rng(300 + seed)
    model = random_model(rng)
    seq = random_sequence(rng, 6, model.obs_dim)
    alpha, _ = forward(model, seq)
    beta = backward(model, seq)
    masses = [
        float(logsumexp(alpha.values[r] + beta.values[r]))
        for r in range(alpha.values.shape[0])
    ]
    np.testing.assert_allclose(masses, masses[0], rtol=0, atol=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_forward_backward_mass_equals_likelihood_when_all_final(seed):
    rng = np.random.default_rng(400 + seed)
    n = int(rng.integers(2, 5))
    base = random_model(rng, num_states=n)
    model = Hmm2Model(
        num_states=n,
        initial=base.initial,
        first_transitions=base.first_transitions,
        transitions=base.transitions,
        emissions=base.emissions,
        topology_mask=base.topology_mask,
        final_states=tuple(range(n)),
    )
    seq = random_sequence(rng, 6, model.obs_dim)
    alpha, ll = forward(model, seq)
    beta = backward(model, seq)
    for r in range(alpha.values.shape[0]):
        mass = float(logsumexp(alpha.values[r] + beta.values[r]))
        assert mass == pytest.approx(ll, abs=1e-9)


def test_sampled_paths_never_beat_decoded():
    rng = np.random.default_rng(500)
    total_checked = 0
    while total_checked < 10_000:
        model = random_model(rng)
        seq = random_sequence(rng, int(rng.integers(3, 7)), model.obs_dim)
        decoded = viterbi_decode(model, seq)
        log_pi, log_a2, log_a3 = log_parameters(model)
        log_b = log_emission_matrix(model, seq.frames)
        finals = set(model.final_states)
        for _ in range(500):
            path = sample_path(rng, model, seq.num_frames)
            if path[-1] not in finals:
                continue
            score = path_score(path, log_pi, log_a2, log_a3, log_b)
            assert score <= decoded.log_joint
            total_checked += 1


def test_tie_breaking_picks_lowest_states():
    model = _uniform_all_final_model(3, 1)
    seq = ObservationSequence(frames=np.zeros((5, 1)))
    decoded = viterbi_decode(model, seq)
    np.testing.assert_array_equal(decoded.states, np.zeros(5, dtype=np.int64))
    again = viterbi_decode(model, seq)
    np.testing.assert_array_equal(again.states, decoded.states)
    assert again.log_joint == decoded.log_joint


def test_unreachable_final_state_fails_cleanly():
    model = new_left_right(3, 1)
    seq = ObservationSequence(frames=np.zeros((2, 1)))
    with pytest.raises(DecodeFailureError):
        viterbi_decode(model, seq)
    with pytest.raises(NumericError):
        forward(model, seq)


def test_decoded_path_respects_topology_and_finals():
    rng = np.random.default_rng(600)
    for _ in range(10):
        n = int(rng.integers(2, 5))
        model = random_model(rng, num_states=n, left_right=True)
        seq = random_sequence(rng, int(rng.integers(n, 8)), model.obs_dim)
        decoded = viterbi_decode(model, seq)
        states = decoded.states
        assert states[-1] in model.final_states
        assert model.first_transitions[states[0], states[1]] > 0.0
        for t in range(2, len(states)):
            assert model.topology_mask[states[t - 2], states[t - 1], states[t]]


def test_lattice_time_indexing():
    rng = np.random.default_rng(14)
    model = random_model(rng)
    seq = random_sequence(rng, 5, model.obs_dim)
    alpha, _ = forward(model, seq)
    assert alpha.num_frames == 5
    np.testing.assert_array_equal(alpha.at_time(2), alpha.values[0])
    np.testing.assert_array_equal(alpha.at_time(5), alpha.values[-1])
    with pytest.raises(ValidationError):
        alpha.at_time(1)
    with pytest.raises(ValidationError):
        alpha.at_time(6)


def test_viterbi_rejects_dimension_mismatch():
    model = new_left_right(3, 2)
    seq = ObservationSequence(frames=np.zeros((4, 3)))
    with pytest.raises(ValidationError):
        viterbi_decode(model, seq)


def test_decoded_score_matches_path_evaluation():
    rng = np.random.default_rng(15)
    model = random_model(rng, num_states=3, obs_dim=2)
    seq = random_sequence(rng, 6, 2)
    decoded = viterbi_decode(model, seq)
    log_pi, log_a2, log_a3 = log_parameters(model)
    log_b = log_emission_matrix(model, seq.frames)
    assert decoded.log_joint == path_score(
        tuple(decoded.states), log_pi, log_a2, log_a3, log_b
    )

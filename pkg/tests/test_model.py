"""Model construction, Gaussian emissions, durations, serialization."""

import math

import numpy as np
import pytest

from hmm2kit.exceptions import ModelFormatError, ValidationError
from hmm2kit.model import (
    GaussianComponent,
    GaussianMixture,
    Hmm2Model,
    ObservationSequence,
    left_right_mask,
    load_model,
    log_emission,
    log_emission_matrix,
    model_from_doc,
    model_to_doc,
    new_left_right,
    save_model,
    single_gaussian,
    state_duration_pmf,
)

from conftest import random_model

# log density of a standard normal evaluated at its mode
LOG_STANDARD_NORMAL_PEAK = -0.5 * math.log(2.0 * math.pi)


def test_standard_normal_at_mode():
    mix = single_gaussian([0.0], [1.0])
    value = mix.log_density(np.zeros((1, 1)))[0]
    assert value == pytest.approx(LOG_STANDARD_NORMAL_PEAK, abs=1e-12)
    assert value == pytest.approx(-0.91894, abs=5e-6)


def test_identical_components_collapse_to_one():
    lone = single_gaussian([1.0, -2.0], [0.7, 1.3])
    comp = lone.components[0]
    doubled = GaussianMixture(components=(comp, comp), weights=np.array([0.5, 0.5]))
    frames = np.array([[0.0, 0.0], [1.0, -2.0], [3.0, 4.0]])
    np.testing.assert_allclose(
        doubled.log_density(frames), lone.log_density(frames), rtol=0, atol=1e-12
    )


def _direct_diagonal_log_density(frame, mean, variances):
    total = 0.0
    for x, mu, var in zip(frame, mean, variances):
        total += -0.5 * math.log(2.0 * math.pi * var) - (x - mu) ** 2 / (2.0 * var)
    return total


def test_two_dim_diagonal_matches_direct_formula():
    mean = [1.0, 2.0]
    variances = [0.5, 2.0]
    frame = np.array([1.5, 1.0])
    mix = single_gaussian(mean, variances)
    expected = _direct_diagonal_log_density(frame, mean, variances)
    assert mix.log_density(frame[None, :])[0] == pytest.approx(expected, abs=1e-12)


def test_full_covariance_matches_direct_formula():
    mean = np.array([0.5, -1.0])
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    comp = GaussianComponent(mean=mean, covariance=cov, covariance_mode="full")
    frame = np.array([1.0, 0.0])
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[1, 0], cov[0, 0]]]) / det
    diff = frame - mean
    expected = -0.5 * (2.0 * math.log(2.0 * math.pi) + math.log(det) + diff @ inv @ diff)
    assert comp.log_density(frame[None, :])[0] == pytest.approx(expected, abs=1e-12)


def test_one_dim_density_integrates_to_one():
    mix = GaussianMixture(
        components=(
            single_gaussian([-2.0], [0.5]).components[0],
            single_gaussian([3.0], [2.0]).components[0],
        ),
        weights=np.array([0.3, 0.7]),
    )
    grid = np.linspace(-30.0, 30.0, 60001)[:, None]
    density = np.exp(mix.log_density(grid))
    integral = np.trapezoid(density, dx=grid[1, 0] - grid[0, 0])
    assert integral == pytest.approx(1.0, abs=1e-4)


def test_log_emission_rejects_dimension_mismatch():
    model = new_left_right(3, 2)
    with pytest.raises(ValidationError):
        log_emission(model, 0, np.zeros(3))
    with pytest.raises(ValidationError):
        log_emission_matrix(model, np.zeros((4, 3)))


def test_new_left_right_topology():
    model = new_left_right(3, 2)
    np.testing.assert_array_equal(model.initial, [1.0, 0.0, 0.0])
    for i in range(3):
        for j in range(3):
            for k in range(3):
                assert model.topology_mask[i, j, k] == (k in (j, j + 1))
    assert model.final_states == (2,)


@pytest.mark.parametrize("num_states,obs_dim", [(2, 1), (3, 4), (5, 8)])
def test_new_left_right_rows_normalized(num_states, obs_dim):
    model = new_left_right(num_states, obs_dim)
    mask = model.topology_mask
    for i in range(num_states):
        for j in range(num_states):
            assert model.transitions[i, j].sum() == pytest.approx(1.0, abs=1e-9)
            assert (model.transitions[i, j][~mask[i, j]] == 0.0).all()


def test_new_left_right_rejects_bad_counts():
    with pytest.raises(ValidationError):
        new_left_right(1, 1)
    with pytest.raises(ValidationError):
        new_left_right(3, 0)
    with pytest.raises(ValidationError):
        new_left_right(3, 2, num_mixtures=0)


def _interior_duration_model(advance, self_loop):
    """3-state left-right model with pinned probabilities around state 1."""
    n = 3
    mask = left_right_mask(n)
    transitions = np.zeros((n, n, n))
    for i in range(n):
        for j in range(n):
            allowed = np.flatnonzero(mask[i, j])
            transitions[i, j, allowed] = 1.0 / allowed.size
    transitions[0, 1, 2] = advance
    transitions[0, 1, 1] = 1.0 - advance
    transitions[1, 1, 1] = self_loop
    transitions[1, 1, 2] = 1.0 - self_loop
    first = np.zeros((n, n))
    for j in range(n):
        allowed = np.flatnonzero(mask.any(axis=0)[j])
        first[j, allowed] = 1.0 / allowed.size
    emissions = tuple(single_gaussian([float(s)], [1.0]) for s in range(n))
    return Hmm2Model(
        num_states=n,
        initial=np.array([1.0, 0.0, 0.0]),
        first_transitions=first,
        transitions=transitions,
        emissions=emissions,
        topology_mask=mask,
        final_states=(n - 1,),
    )


def test_duration_pmf_values():
    model = _interior_duration_model(advance=0.2, self_loop=0.5)
    assert state_duration_pmf(model, 1, 0) == 0.0
    assert state_duration_pmf(model, 1, 1) == pytest.approx(0.2, abs=1e-15)
    # (1 - 0.2) * 0.5^0 * (1 - 0.5)
    assert state_duration_pmf(model, 1, 2) == pytest.approx(0.4, abs=1e-15)
    assert state_duration_pmf(model, 1, 5) == pytest.approx(0.8 * 0.5**3 * 0.5, abs=1e-15)


@pytest.mark.parametrize("advance", [0.05, 0.5, 0.95])
@pytest.mark.parametrize("self_loop", [0.05, 0.5, 0.95])
def test_duration_pmf_sums_to_one(advance, self_loop):
    model = _interior_duration_model(advance, self_loop)
    total = sum(state_duration_pmf(model, 1, n) for n in range(10_000))
    assert total == pytest.approx(1.0, abs=1e-9)


def test_duration_pmf_rejects_bad_arguments():
    model = _interior_duration_model(0.2, 0.5)
    with pytest.raises(ValidationError):
        state_duration_pmf(model, 1, -1)
    with pytest.raises(ValidationError):
        state_duration_pmf(model, 0, 2)
    with pytest.raises(ValidationError):
        state_duration_pmf(model, 2, 2)


def test_save_load_round_trip_is_exact(tmp_path):
    model = random_model(np.random.default_rng(7), num_states=3, obs_dim=2)
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    np.testing.assert_array_equal(loaded.initial, model.initial)
    np.testing.assert_array_equal(loaded.first_transitions, model.first_transitions)
    np.testing.assert_array_equal(loaded.transitions, model.transitions)
    np.testing.assert_array_equal(loaded.topology_mask, model.topology_mask)
    assert loaded.final_states == model.final_states
    for got, want in zip(loaded.emissions, model.emissions):
        np.testing.assert_array_equal(got.weights, want.weights)
        for gc, wc in zip(got.components, want.components):
            np.testing.assert_array_equal(gc.mean, wc.mean)
            np.testing.assert_array_equal(gc.covariance, wc.covariance)


def test_load_rejects_tampered_rows():
    model = new_left_right(3, 1)
    doc = model_to_doc(model)
    doc["a3"][0][0][0] += 0.5
    with pytest.raises(ValidationError):
        model_from_doc(doc)


def test_load_rejects_unknown_version():
    doc = model_to_doc(new_left_right(2, 1))
    doc["version"] = 99
    with pytest.raises(ModelFormatError):
        model_from_doc(doc)


def test_load_rejects_missing_field():
    doc = model_to_doc(new_left_right(2, 1))
    del doc["pi"]
    with pytest.raises(ModelFormatError):
        model_from_doc(doc)


def test_load_rejects_garbage_file(tmp_path):
    path = tmp_path / "model.json"
    path.write_text("not json at all")
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_observation_sequence_needs_two_frames():
    with pytest.raises(ValidationError):
        ObservationSequence(frames=np.zeros((1, 2)))


def test_observation_sequence_checks_channel_names():
    with pytest.raises(ValidationError):
        ObservationSequence(frames=np.zeros((4, 2)), channel_names=("only_one",))


def test_model_requires_final_state():
    model = new_left_right(3, 1)
    with pytest.raises(ValidationError):
        Hmm2Model(
            num_states=3,
            initial=model.initial,
            first_transitions=model.first_transitions,
            transitions=model.transitions,
            emissions=model.emissions,
            topology_mask=model.topology_mask,
            final_states=(),
        )


def test_component_rejects_asymmetric_covariance():
    with pytest.raises(ValidationError):
        GaussianComponent(
            mean=np.zeros(2),
            covariance=np.array([[1.0, 0.2], [0.0, 1.0]]),
            covariance_mode="full",
        )

"""Baum-Welch estimation for second-order models.

The E step accumulates posterior transition-triple counts and per-frame
state occupancies into SufficientStats; the M step rebuilds a model from
merged stats.  Both normalization orders are supported: the full
second-order update, and a first-order mode that pools the triple counts
over the earliest state so every predecessor shares one successor row.

Emission statistics weight every frame of a sequence by its posterior
state occupancy, taken from the pair posteriors for the leading frames
and from the final triple posterior for the last two.  Covariance sums
are accumulated against the accumulating model's means and recentered
around the fresh means inside the M step, which equals the literal
two-pass update exactly.

Guard rails, applied every update: transition rows whose expected count
falls below min_count keep their previous values, and covariance
eigenvalues are clipped from below at variance_floor.  Both guards keep
the per-iteration corpus log-likelihood non-decreasing, since kept rows
leave their terms untouched and the accumulating model always satisfies
the floor itself.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .exceptions import NumericError, ValidationError
from .inference import final_log_term, log_parameters
from .model import (
    DEFAULT_VARIANCE_FLOOR,
    GaussianComponent,
    GaussianMixture,
    Hmm2Model,
    ObservationSequence,
    log_emission_matrix,
    new_left_right,
)

ORDER_MODES = ("first_order", "second_order")

DEFAULT_MIN_COUNT = 1e-3
DEFAULT_MAX_ITERATIONS = 100
DEFAULT_REL_LL_TOLERANCE = 1e-6


@dataclass(frozen=True)
class TrainingConfig:
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    rel_ll_tolerance: float = DEFAULT_REL_LL_TOLERANCE
    order_mode: str = "second_order"
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    min_count: float = DEFAULT_MIN_COUNT

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be at least 1")
        if self.rel_ll_tolerance <= 0.0 or self.variance_floor <= 0.0:
            raise ValidationError("tolerances must be positive")
        if self.order_mode not in ORDER_MODES:
            raise ValidationError(f"unknown order_mode {self.order_mode!r}")


@dataclass
class SufficientStats:
    """Merged posterior counts for one or more sequences.

    Transition counts follow the triple posteriors summed over their
    defined positions; xi_first_sum holds the pair posterior of the first
    two frames, which drives the start distribution and first-step
    updates.  Emission sums are kept per mixture component so mixtures
    larger than one Gaussian reuse the same merge.  Merging is
    elementwise addition, associative and commutative.
    """

    eta_sum: np.ndarray
    xi_sum: np.ndarray
    gamma_sum: np.ndarray
    xi_first_sum: np.ndarray
    comp_gamma_sum: np.ndarray
    weighted_frame_sum: np.ndarray
    weighted_outer_sum: np.ndarray
    num_sequences: int
    total_log_likelihood: float

    @classmethod
    def zeros(cls, num_states: int, num_mixtures: int, obs_dim: int) -> "SufficientStats":
        n, m, d = num_states, num_mixtures, obs_dim
        return cls(
            eta_sum=np.zeros((n, n, n)),
            xi_sum=np.zeros((n, n)),
            gamma_sum=np.zeros(n),
            xi_first_sum=np.zeros((n, n)),
            comp_gamma_sum=np.zeros((n, m)),
            weighted_frame_sum=np.zeros((n, m, d)),
            weighted_outer_sum=np.zeros((n, m, d, d)),
            num_sequences=0,
            total_log_likelihood=0.0,
        )

    def merge(self, other: "SufficientStats") -> "SufficientStats":
        if self.eta_sum.shape != other.eta_sum.shape:
            raise ValidationError("cannot merge stats of different shapes")
        return SufficientStats(
            eta_sum=self.eta_sum + other.eta_sum,
            xi_sum=self.xi_sum + other.xi_sum,
            gamma_sum=self.gamma_sum + other.gamma_sum,
            xi_first_sum=self.xi_first_sum + other.xi_first_sum,
            comp_gamma_sum=self.comp_gamma_sum + other.comp_gamma_sum,
            weighted_frame_sum=self.weighted_frame_sum + other.weighted_frame_sum,
            weighted_outer_sum=self.weighted_outer_sum + other.weighted_outer_sum,
            num_sequences=self.num_sequences + other.num_sequences,
            total_log_likelihood=self.total_log_likelihood + other.total_log_likelihood,
        )

    def __add__(self, other):
        return self.merge(other)


def _component_responsibilities(model, frames, occupancy):
    """Split state occupancy across mixture components, shape (T, N, M)."""
    num_frames = frames.shape[0]
    n = model.num_states
    m_max = model.num_mixtures
    resp = np.zeros((num_frames, n, m_max))
    for i, mix in enumerate(model.emissions):
        comp_ld = mix.component_log_densities(frames)
        with np.errstate(divide="ignore"):
            weighted = comp_ld + np.log(mix.weights)
        total = logsumexp(weighted, axis=1)
        shares = np.where(
            np.isfinite(total)[:, None], weighted - total[:, None], -np.inf
        )
        resp[:, i, : mix.num_components] = occupancy[:, i, None] * np.exp(shares)
    return resp


def accumulate(model: Hmm2Model, seq: ObservationSequence) -> SufficientStats:
    """Posterior counts for one sequence under the given model.

    The normalizer is the forward likelihood restricted to final-state
    endings, so the triple posteriors sum to one at every position.
    """
    if seq.num_channels != model.obs_dim:
        raise ValidationError(
            f"sequence has {seq.num_channels} channels, model expects {model.obs_dim}"
        )
    num_frames = seq.num_frames
    if num_frames < 3:
        raise ValidationError("accumulation needs at least 3 frames")
    log_pi, log_a2, log_a3 = log_parameters(model)
    log_b = log_emission_matrix(model, seq.frames)
    term = final_log_term(model)
    alpha = kernels.forward_lattice(log_pi, log_a2, log_a3, log_b)
    log_likelihood = float(logsumexp(alpha[-1] + term[None, :]))
    if not np.isfinite(log_likelihood):
        raise NumericError("sequence has zero likelihood under this model")
    beta = kernels.backward_lattice(log_a3, log_b, term)
    eta_sum, xi_sum, xi_first, occupancy = kernels.eta_sums(
        alpha, beta, log_a3, log_b, log_likelihood
    )
    resp = _component_responsibilities(model, seq.frames, occupancy)
    comp_gamma_sum = resp.sum(axis=0)
    weighted_frame_sum = np.einsum("tim,td->imd", resp, seq.frames)
    n, m_max, d = model.num_states, model.num_mixtures, model.obs_dim
    weighted_outer_sum = np.empty((n, m_max, d, d))
    for i, mix in enumerate(model.emissions):
        for m in range(m_max):
            mean = mix.components[m].mean if m < mix.num_components else 0.0
            diff = seq.frames - mean
            weighted_outer_sum[i, m] = np.einsum("t,td,te->de", resp[:, i, m], diff, diff)
    return SufficientStats(
        eta_sum=eta_sum,
        xi_sum=xi_sum,
        gamma_sum=occupancy[: num_frames - 2].sum(axis=0),
        xi_first_sum=xi_first,
        comp_gamma_sum=comp_gamma_sum,
        weighted_frame_sum=weighted_frame_sum,
        weighted_outer_sum=weighted_outer_sum,
        num_sequences=1,
        total_log_likelihood=log_likelihood,
    )


def accumulate_corpus(model: Hmm2Model, corpus) -> SufficientStats:
    """Merged stats over a corpus; order of sequences does not matter."""
    stats = SufficientStats.zeros(model.num_states, model.num_mixtures, model.obs_dim)
    for seq in corpus:
        stats = stats.merge(accumulate(model, seq))
    return stats


def _floor_covariance(cov, mode, floor):
    """Constrained covariance update; returns (matrix, was_clipped)."""
    cov = (cov + cov.T) / 2.0
    if mode == "diagonal":
        diag = np.diag(cov).copy()
        clipped = bool(np.any(diag < floor))
        return np.diag(np.maximum(diag, floor)), clipped
    eigvals, eigvecs = np.linalg.eigh(cov)
    clipped = bool(np.any(eigvals < floor))
    eigvals = np.maximum(eigvals, floor)
    rebuilt = (eigvecs * eigvals) @ eigvecs.T
    return (rebuilt + rebuilt.T) / 2.0, clipped


def _updated_mixture(mix, stats, state, floor, min_count, report):
    state_counts = stats.comp_gamma_sum[state, : mix.num_components]
    state_total = float(state_counts.sum())
    if state_total <= min_count:
        report["kept_mixtures"] += 1
        return mix
    weights = state_counts / state_total
    components = []
    for m, comp in enumerate(mix.components):
        count = float(state_counts[m])
        if count <= min_count:
            report["kept_mixtures"] += 1
            components.append(comp)
            continue
        mean = stats.weighted_frame_sum[state, m] / count
        shift = mean - comp.mean
        recentered = stats.weighted_outer_sum[state, m] / count - np.outer(shift, shift)
        cov, clipped = _floor_covariance(recentered, comp.covariance_mode, floor)
        if clipped:
            report["floored_covariances"] += 1
        components.append(
            GaussianComponent(
                mean=mean, covariance=cov, covariance_mode=comp.covariance_mode
            )
        )
    return GaussianMixture(components=tuple(components), weights=weights)


def _reestimate(model: Hmm2Model, stats: SufficientStats, config: TrainingConfig):
    n = model.num_states
    if stats.eta_sum.shape != (n, n, n):
        raise ValidationError("stats do not match the model's state count")
    if stats.weighted_frame_sum.shape[-1] != model.obs_dim:
        raise ValidationError("stats do not match the model's dimension")
    report = {
        "kept_transition_rows": 0,
        "kept_first_rows": 0,
        "kept_mixtures": 0,
        "floored_covariances": 0,
    }
    mask = model.topology_mask
    tensor = np.array(model.transitions)
    if config.order_mode == "second_order":
        row_counts = stats.eta_sum.sum(axis=2)
        for i in range(n):
            for j in range(n):
                if not mask[i, j].any():
                    continue
                if row_counts[i, j] <= config.min_count:
                    report["kept_transition_rows"] += 1
                    continue
                tensor[i, j] = stats.eta_sum[i, j] / row_counts[i, j]
    else:
        if np.any(mask != mask[0:1]):
            raise ValidationError(
                "first_order mode needs a topology mask independent of the "
                "earliest state"
            )
        pooled = stats.eta_sum.sum(axis=0)
        pooled_counts = pooled.sum(axis=1)
        for j in range(n):
            if not mask[0, j].any():
                continue
            if pooled_counts[j] <= config.min_count:
                report["kept_transition_rows"] += 1
                continue
            tensor[:, j, :] = pooled[j] / pooled_counts[j]

    first = np.array(model.first_transitions)
    first_mask = model.first_step_mask()
    first_counts = stats.xi_first_sum.sum(axis=1)
    for j in range(n):
        if not first_mask[j].any():
            continue
        if first_counts[j] <= config.min_count:
            report["kept_first_rows"] += 1
            continue
        first[j] = stats.xi_first_sum[j] / first_counts[j]

    start_total = float(first_counts.sum())
    if start_total > config.min_count:
        initial = first_counts / start_total
    else:
        initial = np.array(model.initial)

    emissions = tuple(
        _updated_mixture(mix, stats, i, config.variance_floor, config.min_count, report)
        for i, mix in enumerate(model.emissions)
    )
    updated = Hmm2Model(
        num_states=n,
        initial=initial,
        first_transitions=first,
        transitions=tensor,
        emissions=emissions,
        topology_mask=mask,
        final_states=model.final_states,
    )
    return updated, report


def reestimate(
    model: Hmm2Model, stats: SufficientStats, mode: str = "second_order"
) -> Hmm2Model:
    """One M step from merged stats; mode picks the normalization order."""
    config = TrainingConfig(order_mode=mode)
    updated, _ = _reestimate(model, stats, config)
    return updated


@dataclass
class TrainingReport:
    """What happened during a training run, ready for a JSON report."""

    ll_trace: list
    iterations: int
    converged: bool
    updates: list

    def to_doc(self) -> dict:
        return {
            "log_likelihood_trace": [float(v) for v in self.ll_trace],
            "iterations": self.iterations,
            "converged": self.converged,
            "updates": self.updates,
        }


def _validate_corpus(model: Hmm2Model, corpus) -> None:
    if not corpus:
        raise ValidationError("training corpus is empty")
    for idx, seq in enumerate(corpus):
        if seq.num_frames < 3:
            raise ValidationError(
                f"corpus sequence {idx} has {seq.num_frames} frames, "
                "at least 3 are required"
            )
        if seq.num_channels != model.obs_dim:
            raise ValidationError(
                f"corpus sequence {idx} has {seq.num_channels} channels, "
                f"model expects {model.obs_dim}"
            )


def train_with_report(model: Hmm2Model, corpus, config: TrainingConfig = None):
    """Full Baum-Welch loop; returns (model, TrainingReport)."""
    if config is None:
        config = TrainingConfig()
    corpus = list(corpus)
    _validate_corpus(model, corpus)
    current = model
    trace = []
    updates = []
    converged = False
    for _ in range(config.max_iterations):
        stats = accumulate_corpus(current, corpus)
        trace.append(stats.total_log_likelihood)
        if len(trace) >= 2:
            gain = trace[-1] - trace[-2]
            scale = max(abs(trace[-2]), 1.0)
            if gain < config.rel_ll_tolerance * scale:
                converged = True
                break
        current, update_report = _reestimate(current, stats, config)
        updates.append(update_report)
    report = TrainingReport(
        ll_trace=trace, iterations=len(trace), converged=converged, updates=updates
    )
    return current, report


def train(model: Hmm2Model, corpus, config: TrainingConfig = None):
    """Train on a corpus; returns (model, per-iteration log-likelihoods)."""
    trained, report = train_with_report(model, corpus, config)
    return trained, report.ll_trace


def initialize_from_segments(
    num_states: int,
    corpus,
    num_mixtures: int = 1,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
    covariance_mode: str = "diagonal",
) -> Hmm2Model:
    """Left-right model seeded from an equal-length split of each sequence.

    Each sequence is cut into num_states chunks; state i pools chunk i
    across the corpus and takes its moments.  Transitions start uniform
    over the left-right successors.  With more than one mixture component
    the pooled mean is spread deterministically along each channel's
    standard deviation so components can specialize during training.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValidationError("initialization corpus is empty")
    obs_dim = corpus[0].num_channels
    for idx, seq in enumerate(corpus):
        if seq.num_frames < num_states:
            raise ValidationError(
                f"corpus sequence {idx} has {seq.num_frames} frames, "
                f"need at least {num_states} to split into chunks"
            )
        if seq.num_channels != obs_dim:
            raise ValidationError(f"corpus sequence {idx} has mismatched channels")
    base = new_left_right(num_states, obs_dim, num_mixtures)
    pooled = [[] for _ in range(num_states)]
    for seq in corpus:
        for state, chunk in enumerate(np.array_split(seq.frames, num_states)):
            pooled[state].append(chunk)
    emissions = []
    for state in range(num_states):
        frames = np.concatenate(pooled[state], axis=0)
        mean = frames.mean(axis=0)
        if covariance_mode == "diagonal":
            variances = np.maximum(frames.var(axis=0), variance_floor)
            cov = np.diag(variances)
        else:
            cov = np.atleast_2d(np.cov(frames, rowvar=False, ddof=0))
            cov, _ = _floor_covariance(cov, "full", variance_floor)
        sigma = np.sqrt(np.diag(cov))
        if num_mixtures == 1:
            offsets = [0.0]
        else:
            offsets = np.linspace(-0.5, 0.5, num_mixtures)
        components = tuple(
            GaussianComponent(
                mean=mean + offset * sigma, covariance=cov, covariance_mode=covariance_mode
            )
            for offset in offsets
        )
        emissions.append(
            GaussianMixture(
                components=components,
                weights=np.full(num_mixtures, 1.0 / num_mixtures),
            )
        )
    return dataclasses.replace(base, emissions=tuple(emissions))

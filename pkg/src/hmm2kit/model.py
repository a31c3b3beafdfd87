"""Domain types for second-order HMMs with Gaussian mixture emissions.

A model over N states keeps three levels of transition structure, matching
how a second-order chain starts up: an initial distribution used at the
first frame, a first-order matrix used for the second frame, and the full
N x N x N tensor used from the third frame on.  A boolean topology mask
records which tensor entries are allowed at all; masked entries stay
exactly zero through construction, training, and serialization.

All probability computation is done in log space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .exceptions import ModelFormatError, ValidationError
from .fileio import write_json_atomic

PROB_TOL = 1e-9
DEFAULT_VARIANCE_FLOOR = 1e-6
MODEL_FORMAT_VERSION = 1

LOG_2PI = math.log(2.0 * math.pi)

COVARIANCE_MODES = ("diagonal", "full")


def _readonly(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GaussianComponent:
    """One Gaussian over D sensor channels.

    The covariance is always stored as a D x D matrix.  In diagonal mode
    the off-diagonal entries must be exactly zero and only the diagonal
    enters the density.
    """

    mean: np.ndarray
    covariance: np.ndarray
    covariance_mode: str = "diagonal"

    def __post_init__(self):
        mean = _readonly(self.mean)
        cov = _readonly(self.covariance)
        if mean.ndim != 1:
            raise ValidationError("component mean must be a vector")
        dim = mean.shape[0]
        if cov.shape != (dim, dim):
            raise ValidationError(
                f"covariance shape {cov.shape} does not match dimension {dim}"
            )
        if self.covariance_mode not in COVARIANCE_MODES:
            raise ValidationError(f"unknown covariance_mode {self.covariance_mode!r}")
        if not np.allclose(cov, cov.T, atol=0.0, rtol=0.0):
            raise ValidationError("covariance must be symmetric")
        if self.covariance_mode == "diagonal":
            off = cov - np.diag(np.diag(cov))
            if np.any(off != 0.0):
                raise ValidationError("diagonal mode requires zero off-diagonal entries")
            if np.any(np.diag(cov) <= 0.0):
                raise ValidationError("diagonal variances must be positive")
        else:
            eigvals = np.linalg.eigvalsh(cov)
            if eigvals[0] <= 0.0:
                raise ValidationError("covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_density(self, frames: np.ndarray) -> np.ndarray:
        """Log density at each row of frames, shape (T, D) -> (T,)."""
        frames = np.asarray(frames, dtype=np.float64)
        diff = frames - self.mean
        if self.covariance_mode == "diagonal":
            var = np.diag(self.covariance)
            quad = np.sum(diff * diff / var, axis=-1)
            logdet = float(np.sum(np.log(var)))
        else:
            chol = np.linalg.cholesky(self.covariance)
            solved = np.linalg.solve(chol, diff.T)
            quad = np.sum(solved * solved, axis=0)
            logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return -0.5 * (self.dim * LOG_2PI + logdet + quad)


@dataclass(frozen=True)
class GaussianMixture:
    """Weighted mixture of Gaussian components sharing one dimension."""

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        components = tuple(self.components)
        if not components:
            raise ValidationError("mixture needs at least one component")
        weights = _readonly(self.weights)
        if weights.shape != (len(components),):
            raise ValidationError("one weight per component is required")
        if np.any(weights < 0.0):
            raise ValidationError("mixture weights must be nonnegative")
        if abs(float(weights.sum()) - 1.0) > PROB_TOL:
            raise ValidationError("mixture weights must sum to 1")
        dim = components[0].dim
        if any(c.dim != dim for c in components):
            raise ValidationError("all components must share one dimension")
        object.__setattr__(self, "components", components)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def num_components(self) -> int:
        return len(self.components)

    def component_log_densities(self, frames: np.ndarray) -> np.ndarray:
        """Per-component log densities, shape (T, D) -> (T, M)."""
        return np.stack([c.log_density(frames) for c in self.components], axis=-1)

    def log_density(self, frames: np.ndarray) -> np.ndarray:
        per_comp = self.component_log_densities(frames)
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        return logsumexp(per_comp + log_w, axis=-1)


def single_gaussian(mean, variances) -> GaussianMixture:
    """Convenience constructor for a one-component diagonal mixture."""
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.diag(np.asarray(variances, dtype=np.float64))
    return GaussianMixture(
        components=(GaussianComponent(mean=mean, covariance=cov),),
        weights=np.ones(1),
    )


@dataclass(frozen=True)
class Hmm2Model:
    """A second-order HMM for one feature.

    Fields
    ------
    num_states : N
    initial : (N,) start distribution, used at the first frame
    first_transitions : (N, N) first-order matrix, used at the second frame
    transitions : (N, N, N) tensor a[i, j, k], used from the third frame on
    emissions : N Gaussian mixtures
    topology_mask : (N, N, N) booleans marking allowed tensor entries
    final_states : sorted tuple of admissible terminal states, nonempty
    """

    num_states: int
    initial: np.ndarray
    first_transitions: np.ndarray
    transitions: np.ndarray
    emissions: tuple
    topology_mask: np.ndarray
    final_states: tuple

    def __post_init__(self):
        n = int(self.num_states)
        if n < 1:
            raise ValidationError("num_states must be positive")
        initial = _readonly(self.initial)
        first = _readonly(self.first_transitions)
        tensor = _readonly(self.transitions)
        mask = _readonly(self.topology_mask, dtype=bool)
        emissions = tuple(self.emissions)
        finals = tuple(sorted(set(int(s) for s in self.final_states)))
        object.__setattr__(self, "num_states", n)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "first_transitions", first)
        object.__setattr__(self, "transitions", tensor)
        object.__setattr__(self, "topology_mask", mask)
        object.__setattr__(self, "emissions", emissions)
        object.__setattr__(self, "final_states", finals)
        _validate_model(self)

    @property
    def obs_dim(self) -> int:
        return self.emissions[0].dim

    @property
    def num_mixtures(self) -> int:
        return max(m.num_components for m in self.emissions)

    def first_step_mask(self) -> np.ndarray:
        """Allowed (j, k) pairs for the second frame, derived from the tensor mask."""
        return self.topology_mask.any(axis=0)

    def final_state_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_states, dtype=bool)
        mask[list(self.final_states)] = True
        return mask


def _check_rows(name: str, rows: np.ndarray, allowed: np.ndarray) -> None:
    """Rows with any allowed entry must sum to 1; fully masked rows must be zero."""
    sums = rows.sum(axis=-1)
    has_mass = allowed.any(axis=-1)
    bad = has_mass & (np.abs(sums - 1.0) > PROB_TOL)
    if np.any(bad):
        where = np.argwhere(bad)[0]
        raise ValidationError(
            f"{name} row {tuple(int(v) for v in where)} sums to "
            f"{sums[tuple(where)]:.12g}, expected 1"
        )
    if np.any(rows[~allowed] != 0.0):
        raise ValidationError(f"{name} has nonzero mass on masked entries")
    if np.any(rows < 0.0):
        raise ValidationError(f"{name} has negative entries")


def _validate_model(model: Hmm2Model) -> None:
    n = model.num_states
    if model.initial.shape != (n,):
        raise ValidationError("initial distribution has wrong shape")
    if model.first_transitions.shape != (n, n):
        raise ValidationError("first_transitions has wrong shape")
    if model.transitions.shape != (n, n, n):
        raise ValidationError("transitions tensor has wrong shape")
    if model.topology_mask.shape != (n, n, n):
        raise ValidationError("topology_mask has wrong shape")
    if len(model.emissions) != n:
        raise ValidationError("one emission mixture per state is required")
    dim = model.emissions[0].dim
    if any(m.dim != dim for m in model.emissions):
        raise ValidationError("emission mixtures must share one dimension")
    if not model.final_states:
        raise ValidationError("at least one final state is required")
    if model.final_states[0] < 0 or model.final_states[-1] >= n:
        raise ValidationError("final state index out of range")
    if np.any(model.initial < 0.0) or abs(float(model.initial.sum()) - 1.0) > PROB_TOL:
        raise ValidationError("initial distribution must sum to 1")
    _check_rows("first_transitions", model.first_transitions, model.first_step_mask())
    _check_rows("transitions", model.transitions, model.topology_mask)


def left_right_mask(num_states: int) -> np.ndarray:
    """Allowed tensor entries for a left-right chain: k in {j, j+1}, any i."""
    n = num_states
    mask = np.zeros((n, n, n), dtype=bool)
    for j in range(n):
        mask[:, j, j] = True
        if j + 1 < n:
            mask[:, j, j + 1] = True
    return mask


def new_left_right(num_states: int, obs_dim: int, num_mixtures: int = 1) -> Hmm2Model:
    """Fresh left-right model with uniform transitions and unit emissions.

    States may self-loop or advance by one; the chain starts in state 0 and
    only the last state is final.  Emissions start as zero-mean unit-variance
    mixtures with uniform weights.
    """
    if num_states < 2:
        raise ValidationError("a left-right chain needs at least 2 states")
    if obs_dim < 1 or num_mixtures < 1:
        raise ValidationError("obs_dim and num_mixtures must be positive")
    n = num_states
    mask = left_right_mask(n)
    tensor = np.zeros((n, n, n))
    counts = mask.sum(axis=2, keepdims=True)
    np.divide(mask, counts, out=tensor, where=counts > 0)
    first_mask = mask.any(axis=0)
    first = first_mask / first_mask.sum(axis=1, keepdims=True)
    initial = np.zeros(n)
    initial[0] = 1.0
    emissions = tuple(
        GaussianMixture(
            components=tuple(
                GaussianComponent(mean=np.zeros(obs_dim), covariance=np.eye(obs_dim))
                for _ in range(num_mixtures)
            ),
            weights=np.full(num_mixtures, 1.0 / num_mixtures),
        )
        for _ in range(n)
    )
    return Hmm2Model(
        num_states=n,
        initial=initial,
        first_transitions=first,
        transitions=tensor,
        emissions=emissions,
        topology_mask=mask,
        final_states=(n - 1,),
    )


def log_emission(model: Hmm2Model, state: int, frame) -> float:
    """Log emission density of one frame under one state's mixture."""
    frame = np.asarray(frame, dtype=np.float64)
    if not 0 <= state < model.num_states:
        raise ValidationError(f"state {state} out of range")
    if frame.shape != (model.obs_dim,):
        raise ValidationError(
            f"frame dimension {frame.shape} does not match obs_dim {model.obs_dim}"
        )
    return float(model.emissions[state].log_density(frame[None, :])[0])


def log_emission_matrix(model: Hmm2Model, frames: np.ndarray) -> np.ndarray:
    """Log emission densities for every frame and state, shape (T, N)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != model.obs_dim:
        raise ValidationError(
            f"frames shape {frames.shape} does not match obs_dim {model.obs_dim}"
        )
    return np.stack([m.log_density(frames) for m in model.emissions], axis=1)


def state_duration_pmf(model: Hmm2Model, state: int, n: int) -> float:
    """Probability of staying exactly n frames in an interior left-right state.

    Entry happens from the previous state; leaving immediately has the
    probability of the advance entry a[state-1, state, state+1], and longer
    stays follow a geometric tail driven by the self-loop a[state, state, state].
    """
    if n < 0:
        raise ValidationError("duration must be nonnegative")
    if not 1 <= state <= model.num_states - 2:
        raise ValidationError("duration pmf needs an interior state")
    advance = float(model.transitions[state - 1, state, state + 1])
    self_loop = float(model.transitions[state, state, state])
    if n == 0:
        return 0.0
    if n == 1:
        return advance
    return (1.0 - advance) * self_loop ** (n - 2) * (1.0 - self_loop)


@dataclass(frozen=True)
class ObservationSequence:
    """A run of T sensor frames with D channels each."""

    frames: np.ndarray
    frame_period: float = 1.0
    channel_names: tuple = ()

    def __post_init__(self):
        frames = _readonly(self.frames)
        if frames.ndim != 2:
            raise ValidationError("frames must be a (T, D) array")
        if frames.shape[0] < 2:
            raise ValidationError("a sequence needs at least 2 frames")
        names = tuple(self.channel_names)
        if names and len(names) != frames.shape[1]:
            raise ValidationError("channel_names length must match frame dimension")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "channel_names", names)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_channels(self) -> int:
        return self.frames.shape[1]


def _mixture_to_doc(mixture: GaussianMixture) -> dict:
    return {
        "weights": [float(w) for w in mixture.weights],
        "components": [
            {
                "mean": [float(v) for v in comp.mean],
                "covariance": [[float(v) for v in row] for row in comp.covariance],
                "covariance_mode": comp.covariance_mode,
            }
            for comp in mixture.components
        ],
    }


def _mixture_from_doc(doc: dict) -> GaussianMixture:
    components = tuple(
        GaussianComponent(
            mean=np.array(c["mean"], dtype=np.float64),
            covariance=np.array(c["covariance"], dtype=np.float64),
            covariance_mode=c.get("covariance_mode", "diagonal"),
        )
        for c in doc["components"]
    )
    return GaussianMixture(components=components, weights=np.array(doc["weights"]))


def model_to_doc(model: Hmm2Model) -> dict:
    """Plain-dict form of a model, as stored in model files."""
    return {
        "version": MODEL_FORMAT_VERSION,
        "num_states": model.num_states,
        "obs_dim": model.obs_dim,
        "pi": [float(v) for v in model.initial],
        "a2": [[float(v) for v in row] for row in model.first_transitions],
        "a3": [
            [[float(v) for v in row] for row in plane] for plane in model.transitions
        ],
        "mixtures": [_mixture_to_doc(m) for m in model.emissions],
        "topology": [
            [[bool(v) for v in row] for row in plane] for plane in model.topology_mask
        ],
        "final_states": [int(s) for s in model.final_states],
    }


def model_from_doc(doc: dict) -> Hmm2Model:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = doc.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {version!r}, "
            f"expected {MODEL_FORMAT_VERSION}"
        )
    required = ("num_states", "obs_dim", "pi", "a2", "a3", "mixtures", "topology", "final_states")
    missing = [key for key in required if key not in doc]
    if missing:
        raise ModelFormatError(f"model document is missing fields: {missing}")
    model = Hmm2Model(
        num_states=int(doc["num_states"]),
        initial=np.array(doc["pi"], dtype=np.float64),
        first_transitions=np.array(doc["a2"], dtype=np.float64),
        transitions=np.array(doc["a3"], dtype=np.float64),
        emissions=tuple(_mixture_from_doc(m) for m in doc["mixtures"]),
        topology_mask=np.array(doc["topology"], dtype=bool),
        final_states=tuple(doc["final_states"]),
    )
    if model.obs_dim != int(doc["obs_dim"]):
        raise ModelFormatError("declared obs_dim does not match mixtures")
    return model


def save_model(model: Hmm2Model, destination) -> None:
    """Write a model file; the write is atomic and byte-stable."""
    write_json_atomic(destination, model_to_doc(model))


def load_model(source) -> Hmm2Model:
    """Read and validate a model file."""
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_doc(doc)

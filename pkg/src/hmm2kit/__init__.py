"""Second-order hidden Markov model toolkit for multi-channel sensor runs.

The package covers the full recognition pipeline: synthesizing or loading
labeled runs, carving them into per-feature corpora, training one model
per feature, composing the models under a grammar, decoding fresh runs
into feature segments, and scoring the result against reference labels.
"""

from .evaluation import Alignment, EvaluationReport, align, report
from .exceptions import (
    DataFormatError,
    DecodeFailureError,
    GrammarError,
    Hmm2KitError,
    ModelFormatError,
    NumericError,
    ValidationError,
)
from .grammar import (
    CompositeModel,
    FeatureSequence,
    Grammar,
    Segment,
    compose,
    decode_run,
    format_grammar,
    learn_grammar_weights,
    parse_grammar,
)
from .inference import (
    DecodedPath,
    TransitionLattice,
    backward,
    forward,
    viterbi_decode,
)
from .kernels import active_backend, available_backends, set_backend
from .model import (
    GaussianComponent,
    GaussianMixture,
    Hmm2Model,
    ObservationSequence,
    left_right_mask,
    load_model,
    new_left_right,
    save_model,
    single_gaussian,
    state_duration_pmf,
)
from .training import (
    SufficientStats,
    TrainingConfig,
    TrainingReport,
    accumulate,
    accumulate_corpus,
    initialize_from_segments,
    reestimate,
    train,
    train_with_report,
)

__version__ = "0.1.0"

__all__ = [
    "Alignment",
    "CompositeModel",
    "DataFormatError",
    "DecodeFailureError",
    "DecodedPath",
    "EvaluationReport",
    "FeatureSequence",
    "GaussianComponent",
    "GaussianMixture",
    "Grammar",
    "GrammarError",
    "Hmm2KitError",
    "Hmm2Model",
    "ModelFormatError",
    "NumericError",
    "ObservationSequence",
    "Segment",
    "SufficientStats",
    "TrainingConfig",
    "TrainingReport",
    "TransitionLattice",
    "ValidationError",
    "accumulate",
    "accumulate_corpus",
    "active_backend",
    "align",
    "available_backends",
    "backward",
    "compose",
    "decode_run",
    "format_grammar",
    "forward",
    "initialize_from_segments",
    "learn_grammar_weights",
    "left_right_mask",
    "load_model",
    "new_left_right",
    "parse_grammar",
    "reestimate",
    "report",
    "save_model",
    "set_backend",
    "single_gaussian",
    "state_duration_pmf",
    "train",
    "train_with_report",
    "viterbi_decode",
]

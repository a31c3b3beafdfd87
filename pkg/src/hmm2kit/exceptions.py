"""Exception types shared across the toolkit."""


class Hmm2KitError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(Hmm2KitError):
    """A model, argument, or data structure violates a documented invariant."""


class ModelFormatError(Hmm2KitError):
    """A model file could not be parsed or has an unsupported version."""


class DataFormatError(Hmm2KitError):
    """A run, label, or scenario file could not be parsed."""


class GrammarError(Hmm2KitError):
    """A grammar document is malformed or references unknown nodes."""


class DecodeFailureError(Hmm2KitError):
    """No admissible state path exists for the observation sequence."""


class NumericError(Hmm2KitError):
    """A computation lost all probability mass or produced non-finite values."""

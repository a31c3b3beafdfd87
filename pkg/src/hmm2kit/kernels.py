"""Backend selection for the lattice kernels.

Two interchangeable implementations exist: compiled numba kernels and a
pure numpy fallback.  The active one is chosen once, lazily:

  - HMM2KIT_BACKEND=numba or =numpy forces a backend (numba must then
    import cleanly),
  - otherwise numba is used when available, numpy when not.

set_backend() overrides the choice at runtime, which the benchmark and
the parity tests use to run both implementations side by side.
"""

import logging
import os

from . import _kernels_numpy
from .exceptions import ValidationError

log = logging.getLogger(__name__)

BACKEND_ENV_VAR = "HMM2KIT_BACKEND"

try:
    from . import _kernels_numba
except ImportError:  # pragma: no cover - depends on the installed stack
    _kernels_numba = None

_IMPLS = {"numpy": _kernels_numpy}
if _kernels_numba is not None:
    _IMPLS["numba"] = _kernels_numba

_active = None


def available_backends() -> tuple:
    return tuple(sorted(_IMPLS))


def _resolve_default() -> str:
    requested = os.environ.get(BACKEND_ENV_VAR, "").strip().lower()
    if requested:
        if requested not in ("numba", "numpy"):
            raise ValidationError(
                f"{BACKEND_ENV_VAR} must be 'numba' or 'numpy', got {requested!r}"
            )
        if requested not in _IMPLS:
            raise ValidationError(
                f"{BACKEND_ENV_VAR}={requested} but numba is not importable"
            )
        return requested
    if "numba" in _IMPLS:
        return "numba"
    log.info("numba unavailable, falling back to numpy kernels")
    return "numpy"


def active_backend() -> str:
    """Name of the backend in use, resolving it on first call."""
    global _active
    if _active is None:
        _active = _resolve_default()
    return _active


def set_backend(name: str) -> None:
    if name not in ("numba", "numpy"):
        raise ValidationError(f"unknown backend {name!r}")
    if name not in _IMPLS:
        raise ValidationError(f"backend {name!r} is not importable here")
    global _active
    _active = name


def _impl():
    return _IMPLS[active_backend()]


def forward_lattice(log_pi, log_a2, log_a3, log_b):
    return _impl().forward_lattice(log_pi, log_a2, log_a3, log_b)


def backward_lattice(log_a3, log_b, log_term):
    return _impl().backward_lattice(log_a3, log_b, log_term)


def viterbi_path(log_pi, log_a2, log_a3, log_b, final_mask):
    return _impl().viterbi_path(log_pi, log_a2, log_a3, log_b, final_mask)


def eta_sums(alpha, beta, log_a3, log_b, log_norm):
    return _impl().eta_sums(alpha, beta, log_a3, log_b, log_norm)

"""Probability functional descent on finite sample spaces.

The descent loop alternates estimating an influence function of a
probability functional ``J`` at the current measure and decreasing the
expectation of that estimate.  GAN training, variational inference and
several reinforcement-learning algorithms are instances; see
:mod:`pfd.presets`.
"""

from ._validation import (
    BoundaryError,
    ConfigError,
    DomainError,
    EstimatorDivergence,
    NumericalError,
    PFDError,
    UnsupportedOperation,
)
from .divergences import LatentModel
from .engine import PfdConfig, PfdResult, TraceRecord, pfd_run
from .estimators import EstimatorConfig
from .functional import Functional
from .mdp import TabularMdp
from .presets import PRESETS, ProbabilityFunctionalDescent, build_preset, run_preset
from .space import FiniteSpace
from .transport import MetricSpace

__version__ = "0.1.0"

__all__ = [
    "BoundaryError",
    "ConfigError",
    "DomainError",
    "EstimatorDivergence",
    "NumericalError",
    "PFDError",
    "UnsupportedOperation",
    "LatentModel",
    "PfdConfig",
    "PfdResult",
    "TraceRecord",
    "pfd_run",
    "EstimatorConfig",
    "Functional",
    "TabularMdp",
    "PRESETS",
    "ProbabilityFunctionalDescent",
    "build_preset",
    "run_preset",
    "FiniteSpace",
    "MetricSpace",
]

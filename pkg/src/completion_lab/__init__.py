"""Completion-capacity laboratory for stochastic matrix sources.

Core layers: source models and observation channels, exact information
measures, capacity formulas with fixed-point evaluation, MAP and typicality
decoders, and a seeded Monte Carlo harness.  A FastAPI service wraps the
package; the CLI is a thin client of that service.
"""

__version__ = "0.1.0"

from .channels import Dmc, ErasureSpec, ObservedMatrix, apply_dmc, apply_erasure, observe
from .errors import (
    CapacityZeroError,
    DegenerateSourceError,
    LabError,
    ModelValidationError,
    NumericalError,
    TransitionOutsideGrid,
    UsageError,
    WorkCapExceeded,
)
from .models import (
    ColumnPmf,
    MarkovColumnSource,
    MatrixSample,
    SourceModel,
    ValidationReport,
    row_marginal_pmf,
    row_sequence_log_prob,
    sample_matrix,
    sequence_log_prob,
    stationary_distribution,
    validate_model,
)

__all__ = [
    "__version__",
    "Dmc",
    "ErasureSpec",
    "ObservedMatrix",
    "apply_dmc",
    "apply_erasure",
    "observe",
    "ColumnPmf",
    "MarkovColumnSource",
    "MatrixSample",
    "SourceModel",
    "ValidationReport",
    "row_marginal_pmf",
    "row_sequence_log_prob",
    "sample_matrix",
    "sequence_log_prob",
    "stationary_distribution",
    "validate_model",
    "LabError",
    "UsageError",
    "ModelValidationError",
    "NumericalError",
    "DegenerateSourceError",
    "CapacityZeroError",
    "TransitionOutsideGrid",
    "WorkCapExceeded",
]

"""Differentially private estimation, debiased inference and FDR control for
high-dimensional sparse linear regression."""

__version__ = "0.1.0"

from .mechanisms import (  # noqa: E402
    BudgetExceededError,
    InvalidParameterError,
    NoiseMode,
    PrivacyBudget,
)
from .regression import Dataset, IhtConfig, SparseEstimate  # noqa: E402

__all__ = [
    "BudgetExceededError",
    "Dataset",
    "IhtConfig",
    "InvalidParameterError",
    "NoiseMode",
    "PrivacyBudget",
    "SparseEstimate",
    "__version__",
]

"""Budget-exact randomized treatment assignment by swap rounding."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AssignmentDraw,
    BudgetMismatch,
    DesignError,
    DesignSpec,
    DimensionMismatch,
    EstimateReport,
    Mechanism,
    OutcomeTable,
    OutOfRange,
    SwapRecord,
    SwapRoundError,
    SwapTrace,
    design_from,
    pair_covariance,
    sate,
    validate_design,
)
from .rounding import OrderedChain, RandomChain, SequentialChain, single_swap, swap_round, swap_round_batch  # noqa: E402
from .estimators import (  # noqa: E402
    confidence_interval,
    estimate,
    ipw_estimate,
    observe,
    self_normalized_ipw,
    variance_estimate,
)
from .ordering import order_covariates  # noqa: E402

__all__ = [
    "AssignmentDraw", "BudgetMismatch", "DesignError", "DesignSpec", "DimensionMismatch", "EstimateReport",
    "Mechanism", "OutcomeTable", "OutOfRange", "SwapRecord", "SwapRoundError", "SwapTrace", "design_from",
    "pair_covariance", "sate", "validate_design", "OrderedChain", "RandomChain", "SequentialChain",
    "single_swap", "swap_round", "swap_round_batch", "confidence_interval", "estimate", "ipw_estimate",
    "observe", "self_normalized_ipw", "variance_estimate", "order_covariates",
]

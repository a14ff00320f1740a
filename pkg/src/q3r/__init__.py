"""Low-rank training with the Quadratic Reweighted Rank Regularizer (Q3R)."""
from q3r.optim import (
    NumericalError,
    OptimizerConfig,
    ParamTensor,
    TargetRank,
    adam_step,
    adam_with_q3r_in_loss_step,
    adamq3r_step,
)
from q3r.reweighting import (
    ReweightingOperator,
    SmoothingState,
    apply,
    grad_q3r,
    operator_from_matrix,
    q3r_value,
    quadratic_model,
    update_operator,
)
from q3r.spectral import F_eps, SvdResult, f_eps, grad_F_eps_oracle, svd_truncated, tail_ratio
from q3r.truncation import rank_for_retention, truncate_and_eval, truncate_matrix

__version__ = "0.1.0"

__all__ = [
    "F_eps",
    "NumericalError",
    "OptimizerConfig",
    "ParamTensor",
    "ReweightingOperator",
    "SmoothingState",
    "SvdResult",
    "TargetRank",
    "adam_step",
    "adam_with_q3r_in_loss_step",
    "adamq3r_step",
    "apply",
    "f_eps",
    "grad_F_eps_oracle",
    "grad_q3r",
    "operator_from_matrix",
    "q3r_value",
    "quadratic_model",
    "rank_for_retention",
    "svd_truncated",
    "tail_ratio",
    "truncate_and_eval",
    "truncate_matrix",
    "update_operator",
]

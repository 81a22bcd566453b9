"""MLP training with per-layer Fisher whitening."""

from ._core import (
    ConfigError,
    DataError,
    Error,
    FisherConfig,
    Model,
    NumericError,
    ShapeError,
    Trainer,
    damp_spd,
    db_sqrt,
    gram_mean,
    invsqrt_residual,
    reparam_discrepancy,
    local_fisher,
    ns_invsqrt,
    run_experiment,
    spd_invsqrt_oracle,
    spd_sqrt_oracle,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "FisherConfig",
    "Model",
    "NumericError",
    "ShapeError",
    "Trainer",
    "damp_spd",
    "db_sqrt",
    "gram_mean",
    "invsqrt_residual",
    "reparam_discrepancy",
    "local_fisher",
    "ns_invsqrt",
    "run_experiment",
    "spd_invsqrt_oracle",
    "spd_sqrt_oracle",
]

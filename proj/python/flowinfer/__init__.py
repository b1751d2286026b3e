"""Amortized simulation-based inference: simulators, amortizers, diagnostics."""

from _flowinfer import (
    Comparison,
    ConfigError,
    ContractError,
    DomainError,
    FormatError,
    Posterior,
    ShapeError,
    builtin_models,
    chi2_sf,
    mmd2_unbiased,
    run_command,
    simulate,
    uniformity_test,
)

__all__ = [
    "Comparison",
    "ConfigError",
    "ContractError",
    "DomainError",
    "FormatError",
    "Posterior",
    "ShapeError",
    "builtin_models",
    "chi2_sf",
    "mmd2_unbiased",
    "run_command",
    "simulate",
    "uniformity_test",
]

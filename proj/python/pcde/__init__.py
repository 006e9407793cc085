"""Partition-based conditional density estimation by penalized maximum likelihood."""

from ._core import (
    ContractError,
    DataError,
    DomainError,
    Error,
    PolyModel,
    ResourceError,
    SpatialGmm,
    coding_c0,
    fit_poly,
    gaussian_hellinger2,
    hellinger2,
    jkl,
    jkl_hellinger_constant,
    kl,
    kraft_sum,
    load_model,
    sample,
    scenarios,
    select_gmm,
    select_poly,
)

__all__ = [
    "ContractError",
    "DataError",
    "DomainError",
    "Error",
    "PolyModel",
    "ResourceError",
    "SpatialGmm",
    "coding_c0",
    "fit_poly",
    "gaussian_hellinger2",
    "hellinger2",
    "jkl",
    "jkl_hellinger_constant",
    "kl",
    "kraft_sum",
    "load_model",
    "sample",
    "scenarios",
    "select_gmm",
    "select_poly",
]

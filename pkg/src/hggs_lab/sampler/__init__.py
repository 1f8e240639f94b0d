from .gradient import (
    ConfigurationError,
    InconsistentDuplicateError,
    SamplerConfig,
    gradient_degree,
    gradient_degree_arrays,
    gradient_filter,
)
from .mgs import grid_sample_pair, mgs_generate
from .stratify import ResidualStratification, gmm_stratify

__all__ = [
    "ConfigurationError",
    "InconsistentDuplicateError",
    "ResidualStratification",
    "SamplerConfig",
    "gmm_stratify",
    "gradient_degree",
    "gradient_degree_arrays",
    "gradient_filter",
    "grid_sample_pair",
    "mgs_generate",
]

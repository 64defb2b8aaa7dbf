"""Volcanic aerosol plume surrogates and Bayesian source inversion.

A pipeline that generates a synthetic 1D transport campaign, reduces the
aerosol fields to periodized Gaussian RBF hyperparameters, reduces the
zonal wind to plume-localized PCA coordinates, learns a physics-constrained
flow map for the reduced dynamics, and inverts noisy AOD observations for
the initial SO2 plume with a marginalized Gaussian likelihood.
"""

__version__ = "0.1.0"

from plume.errors import (
    ConfigurationError,
    DataError,
    EmptyLocalizationError,
    NumericalError,
    StabilityError,
)

__all__ = [
    "ConfigurationError",
    "DataError",
    "EmptyLocalizationError",
    "NumericalError",
    "StabilityError",
    "__version__",
]

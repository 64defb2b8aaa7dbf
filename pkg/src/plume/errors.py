"""Exception hierarchy shared across the pipeline.

The CLI maps these to exit codes: ConfigurationError -> 2, DataError -> 3,
NumericalError (and subclasses) -> 4.
"""


class PlumeError(Exception):
    """Base class for all pipeline errors."""


class ConfigurationError(PlumeError):
    """Invalid or inconsistent configuration."""


class DataError(PlumeError):
    """Malformed, missing, or non-finite input data."""


class NumericalError(PlumeError):
    """A numerical procedure failed (instability, divergence, rank loss)."""


class StabilityError(NumericalError):
    """Explicit time step violates its stability bound."""


class EmptyLocalizationError(NumericalError):
    """Plume threshold leaves no grid cells to localize the wind on."""

"""Exception hierarchy shared by all modules.

The CLI maps ``ConfigError``/``DomainError`` to exit code 2 and every
``NumericalError`` (including assumption violations) to exit code 3.
"""


class ArtifactError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ArtifactError, ValueError):
    """Invalid parameters or configuration."""


class DomainError(ArtifactError, ValueError):
    """An argument lies outside the domain where a function is defined."""


class NumericalError(ArtifactError, RuntimeError):
    """Non-convergence, ill-conditioning or an ambiguous spectral branch."""


class AssumptionViolation(NumericalError):
    """The reservoir fails the decay certificate; downstream code refuses to run."""


class InsufficientSamples(NumericalError):
    """A Monte Carlo estimate has too large a standard error."""

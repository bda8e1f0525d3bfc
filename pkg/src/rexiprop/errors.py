"""Exception types shared across the package.

The CLI maps these onto process exit codes, so the split matters:
configuration problems are user-fixable without touching any math, while
NumericalError subclasses mean a requested computation is ill-posed or
outside the method's validity region.
"""


class ConfigError(ValueError):
    """A config file or CLI parameter is missing, unknown, or malformed."""


class NumericalError(RuntimeError):
    """Base class for failures of the numerical contracts (singular systems,
    degenerate approximation targets, inadmissible step sizes, ...)."""


class ApproximationError(NumericalError):
    """The rational-approximation pipeline cannot produce a valid result."""


class SolverError(NumericalError):
    """A direct factorization or solve failed (singular or near-singular)."""


class SpatialError(NumericalError):
    """The discretization or initial-state setup violates its preconditions."""


class AdmissibilityError(NumericalError):
    """The time step is too large for the spectral extent of the operator."""

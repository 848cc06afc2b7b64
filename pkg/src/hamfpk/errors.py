"""Exception types shared across the package."""


class HamfpkError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HamfpkError):
    """A requested setup is inconsistent or unsupported."""


class SingularStateError(HamfpkError):
    """A state entered a region where the dynamics are singular."""


class DecompositionError(HamfpkError):
    """A matrix factorization failed (e.g. covariance not SPD)."""


class AssemblyError(HamfpkError):
    """A collocation-system entry came out non-finite."""


class SolverError(HamfpkError):
    """The sparse solver failed to converge.

    Carries the last iterate and its residual for post-mortem inspection.
    """

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class NormalizationError(HamfpkError):
    """Density normalization failed (degenerate importance weights, etc.)."""

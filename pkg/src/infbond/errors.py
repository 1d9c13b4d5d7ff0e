"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Malformed or structurally inconsistent input."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class ConfigurationError(ValueError):
    """A market or scenario configuration cannot be run as given."""


class TruncationError(ValueError):
    """A claim references factors beyond the simulated truncation level."""


class RangeError(ValueError):
    """Vector requested outside the positive eigenspace of an operator."""


class IllConditionedError(RuntimeError):
    """Linear solve too ill-conditioned to trust (condition number reported)."""

    def __init__(self, message, condition=None, sample=None):
        super().__init__(message)
        self.condition = condition
        self.sample = sample


class CalibrationError(RuntimeError):
    """Budget calibration failed to bracket a root."""


class NotDifferentiableError(ValueError):
    """Malliavin derivative requested for a non-differentiable claim."""

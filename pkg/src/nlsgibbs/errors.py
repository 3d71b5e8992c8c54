"""Exception hierarchy.

Every fault carries a category that the command-line layer maps onto an
exit code (2 for configuration faults, 3 for numerical faults).
"""


class NLSGibbsError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigError(NLSGibbsError, ValueError):
    """Parameters outside the admissible window or malformed configuration."""

    exit_code = 2


class NumericalError(NLSGibbsError, ArithmeticError):
    """A numerical procedure failed or produced unusable output."""


class TruncationError(NumericalError):
    """Collocation grid too coarse for the requested spectral truncation."""


class DealiasingError(NumericalError):
    """Grid padding insufficient for an exact pointwise power."""


class DomainError(NumericalError):
    """Argument outside the convergence domain of a product or integral."""


class ToleranceError(NumericalError):
    """An iterative or quadrature procedure missed its tolerance."""


class StuckChainError(NumericalError):
    """A Markov chain accepted nothing over a full diagnostic window."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BlowUpError(NumericalError):
    """Non-finite values appeared while integrating a trajectory."""

    def __init__(self, message, step=None, dump=None):
        super().__init__(message)
        self.step = step
        self.dump = dump


class DegenerateStateError(NumericalError):
    """Operation undefined at the current state (e.g. projection at phi = 0)."""


class DivergenceError(NumericalError):
    """A truncated product or sum does not converge as K grows."""


class AccuracyError(NumericalError):
    """Quadrature order too low to integrate the assembled terms exactly."""


class InsufficientSignalError(NumericalError):
    """No usable fitting window above the noise floor."""

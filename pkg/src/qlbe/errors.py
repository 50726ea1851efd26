"""Exception hierarchy.

Errors fall into two families so the CLI can map them onto exit codes:
input/contract violations (exit 2) and numerical failures (exit 3).
"""


class QLBEError(Exception):
    """Base class for all package errors."""


class ConfigError(QLBEError, ValueError):
    """Invalid scenario configuration. ``path`` names the offending key."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ZeroAxis(QLBEError, ValueError):
    pass


class OffShell(QLBEError, ValueError):
    pass


class OffPlane(QLBEError, ValueError):
    pass


class SingularQ(QLBEError, ValueError):
    pass


class WrongModel(QLBEError, ValueError):
    pass


class UnsupportedVariant(QLBEError, ValueError):
    pass


class NumericalError(QLBEError, ArithmeticError):
    """A computation ran but could not meet its accuracy or stability contract."""


class CutoffTooSmall(NumericalError):
    pass


class QuadratureNotConverged(NumericalError):
    pass


class RoutesDisagree(NumericalError):
    pass


class StepTooLarge(NumericalError):
    pass


class EnvelopeExceeded(NumericalError):
    pass


class GridTooSmall(NumericalError):
    pass


class StepUnstable(NumericalError):
    pass


class FitIllConditioned(NumericalError):
    pass

"""Exception types raised across the package."""


class HazardDiscountError(Exception):
    """Base class for all package errors."""


class DomainError(HazardDiscountError, ValueError):
    """An argument lies outside the domain of the function."""


class ParameterError(HazardDiscountError, ValueError):
    """A parameter combination cannot be represented numerically."""


class ConfigurationError(HazardDiscountError, ValueError):
    """Objects were combined in an inconsistent way."""


class ShapeError(HazardDiscountError, ValueError):
    """Array lengths or shapes do not line up."""


class DiscountRangeError(HazardDiscountError, IndexError):
    """A tabulated discount was queried outside its table."""


class NumericError(HazardDiscountError, ArithmeticError):
    """A numerical routine failed or received non-finite input."""

    def __init__(self, message, achieved_tolerance=None):
        super().__init__(message)
        self.achieved_tolerance = achieved_tolerance


class HorizonWarning(UserWarning):
    """A finite-horizon computation may have truncated a non-negligible tail."""


class SnapWarning(UserWarning):
    """A point mass was snapped to a ladder node farther away than the local gap."""


class ConvergenceWarning(UserWarning):
    """A learned table has not converged to the requested residual."""


class BoundWarning(UserWarning):
    """A learned value exceeds the range any discounted return can reach."""

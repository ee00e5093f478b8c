"""Exception types shared across the toolkit."""


class AOSRError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(AOSRError, ValueError):
    pass


class DTypeError(AOSRError, TypeError):
    pass


class DomainError(AOSRError, ValueError):
    pass


class SingularityError(AOSRError, ArithmeticError):
    """A denominator came too close to zero.

    ``index`` holds the offending element coordinates when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NonFiniteError(AOSRError, FloatingPointError):
    pass


class ContractError(AOSRError, RuntimeError):
    pass


class FormatError(AOSRError, ValueError):
    pass


class IntegrityError(AOSRError):
    pass


class ConfigError(AOSRError, ValueError):
    pass

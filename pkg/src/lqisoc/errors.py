"""Exception hierarchy shared by all modules."""


class IsocError(Exception):
    """Base class for every error raised by lqisoc."""


class DimensionError(IsocError, ValueError):
    pass


class InvalidModel(IsocError, ValueError):
    """A model invariant (symmetry, PSD, selector structure) does not hold."""


class InvalidCost(IsocError, ValueError):
    """The assembled control-effort matrix R is not positive definite."""


class InvalidConfig(IsocError, ValueError):
    pass


class InvalidNormalizer(IsocError, ValueError):
    pass


class InsufficientSamples(IsocError, ValueError):
    pass


class NumericalError(IsocError, ArithmeticError):
    """A recursion produced non-finite values or hit a singular system."""


class FormatError(IsocError, ValueError):
    """A data file does not follow the expected layout."""

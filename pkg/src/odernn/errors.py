"""Exception hierarchy shared by all modules."""


class OdeRnnError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(OdeRnnError, ValueError):
    """Shapes are inconsistent with an operation or a parameter record."""


class NumericError(OdeRnnError, ArithmeticError):
    """A NaN or infinity appeared in a computed value."""


class UsageError(OdeRnnError, ValueError):
    """An API was called with arguments violating its contract."""


class BudgetError(OdeRnnError, RuntimeError):
    """The solver exceeded its step budget."""


class FormatError(OdeRnnError, ValueError):
    """An input file is malformed (missing column, unparsable cell)."""


class DataError(OdeRnnError, ValueError):
    """Input data violates a semantic requirement (ordering, variance)."""

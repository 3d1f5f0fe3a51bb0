"""Exception hierarchy shared by all modules."""


class AceError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(AceError, ValueError):
    pass


class MissingColumn(SchemaError):
    pass


class NonBinaryLabel(SchemaError):
    pass


class OutOfBoundsValue(SchemaError):
    pass


class UnknownCategory(SchemaError):
    pass


class DimensionMismatch(AceError, ValueError):
    pass


class AdapterFailure(AceError, RuntimeError):
    pass


class SingleClassData(AceError, ValueError):
    pass


class SingleClassInit(AceError, RuntimeError):
    pass


class NotPositiveSemidefinite(AceError, ValueError):
    pass


class AllZeroVariance(AceError, ValueError):
    pass


class BudgetExhausted(AceError, RuntimeError):
    """The black-box query budget would be exceeded by the next call."""


class NoValidCfe(AceError, RuntimeError):
    """No label-flipping point was found; ``result`` holds the failed attempt."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SingleMethod(AceError, ValueError):
    pass

"""Exception hierarchy shared by every module."""


class PromptOTError(Exception):
    """Base class for all library errors."""


class ValidationError(PromptOTError, ValueError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class ZeroRow(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class NonPositiveTemperature(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class LabelOutOfRange(ValidationError):
    pass


class IndexMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class MissingTruth(ValidationError):
    pass


class UnbalancedMarginals(ValidationError):
    pass


class TooLarge(ValidationError):
    pass


class NumericalError(PromptOTError, ArithmeticError):
    """Raised when a numerical routine cannot produce a finite answer."""


class NumericalUnderflow(NumericalError):
    pass


class RejectionFailure(PromptOTError, RuntimeError):
    pass


class DatasetIOError(PromptOTError, OSError):
    pass


class BlobLengthMismatch(DatasetIOError, ValidationError):
    pass


class UnsupportedVersion(DatasetIOError, ValidationError):
    pass

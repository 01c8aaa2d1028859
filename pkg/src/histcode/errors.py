"""Exception types raised across the pipeline."""


class HistCodeError(Exception):
    """Base class for all package errors."""


class DegenerateHistogram(HistCodeError):
    pass


class SchemaMismatch(HistCodeError):
    pass


class NumericalDegeneracy(HistCodeError):
    pass


class NonFinite(HistCodeError):
    """Raised when an input or intermediate is NaN/inf.

    ``step`` is set by the training loops so the failing iteration is known.
    """

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class InsufficientTiles(HistCodeError):
    pass


class SingleClassSplit(HistCodeError):
    pass


class BagTooSmall(HistCodeError):
    pass


class DimensionMismatch(HistCodeError):
    pass


class TooFewPatients(HistCodeError):
    pass


class SingleClass(HistCodeError):
    pass


class ConstantVector(HistCodeError):
    pass


class TooFewValues(HistCodeError):
    pass


class CoordOutOfBounds(HistCodeError):
    pass


class ConfigError(HistCodeError):
    pass


class MissingUpstreamArtifact(HistCodeError):
    def __init__(self, path, hint=""):
        msg = f"missing upstream artifact: {path}"
        if hint:
            msg += f" ({hint})"
        super().__init__(msg)
        self.path = str(path)

"""Exception types raised across the toolkit."""


class MssError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgument(MssError, ValueError):
    pass


class UnsupportedFormat(MssError):
    pass


class CorruptFile(MssError):
    pass


class IoError(MssError, OSError):
    pass


class SampleRateMismatch(MssError, ValueError):
    pass


class MissingImpulseResponse(MssError):
    pass


class UnknownInstrument(MssError, KeyError):
    pass


class NoValidFrames(MssError):
    pass


class DegenerateSamples(MssError, ValueError):
    pass


class InsufficientPool(MssError):
    pass


class TooShort(MssError, ValueError):
    pass


class IncompatibleWeights(MssError):
    pass


class CorruptWeights(MssError):
    pass


class GraphError(MssError, RuntimeError):
    pass


class DivergenceError(MssError, ArithmeticError):
    """Training produced a non-finite loss. ``history`` holds the epochs run so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []

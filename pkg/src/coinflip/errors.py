"""Exception hierarchy shared by every module."""


class CoinFlipError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(CoinFlipError, ValueError):
    pass


class InvalidStateError(CoinFlipError, RuntimeError):
    pass


class EmptyBufferError(InvalidStateError):
    pass


class RecordNotFoundError(CoinFlipError, KeyError):
    pass


class TrainingDivergedError(CoinFlipError, ArithmeticError):
    """Raised when a loss or metric becomes non-finite."""

"""Exception hierarchy shared by every fedcast module."""

from __future__ import annotations


class FedcastError(Exception):
    """Base class for all fedcast errors."""


class ParameterRangeError(FedcastError, ValueError):
    pass


class IngestionError(FedcastError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientDataError(FedcastError, ValueError):
    pass


class SplitError(FedcastError, ValueError):
    pass


class DomainError(FedcastError, ValueError):
    pass


class NumericError(FedcastError, ArithmeticError):
    pass


class DivergenceError(FedcastError, ArithmeticError):
    """Raised when training produces a non-finite or blown-up loss."""

    def __init__(self, step: int, loss: float, client: int | None = None):
        self.step = step
        self.loss = loss
        self.client = client
        who = f"client {client}, " if client is not None else ""
        super().__init__(f"training diverged ({who}step {step}, loss={loss!r})")


class ProtocolError(FedcastError, ValueError):
    pass


class PartitionError(FedcastError, ValueError):
    pass


class ConfigError(FedcastError, ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key {key!r}: {message}")

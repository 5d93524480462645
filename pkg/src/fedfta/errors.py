"""Exception hierarchy shared by every fedfta module."""

from __future__ import annotations


class FedFtaError(Exception):
    """Base class for all errors raised by fedfta."""


class DimensionError(FedFtaError, ValueError):
    """Operands have incompatible shapes or lengths."""


class NumericError(FedFtaError, ArithmeticError):
    """A computation produced a non-finite value. ``x`` is the offending input, when known."""

    def __init__(self, message: str, x: float | None = None):
        self.x = x
        super().__init__(message)


class ArgumentError(FedFtaError, ValueError):
    """An argument violates an operation's precondition."""


class GenerationError(FedFtaError):
    """Synthetic data generation could not satisfy its constraints."""


class IngestionError(FedFtaError):
    """A dataset file could not be read or validated."""

    def __init__(self, message: str, path: str | None = None, row: int | None = None):
        self.path = path
        self.row = row
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)


class PartitionError(FedFtaError):
    """A client partition could not satisfy its constraints."""


class ProtocolError(FedFtaError):
    """The federation protocol was violated or a participant failed."""

    def __init__(self, message: str, client_id: int | None = None, round_index: int | None = None):
        self.client_id = client_id
        self.round_index = round_index
        super().__init__(message)


class ConfigError(FedFtaError, ValueError):
    """An experiment configuration is invalid. ``key`` names the offending field."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)

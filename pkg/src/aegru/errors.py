"""Exception hierarchy shared by every stage of the pipeline.

Each class carries the process exit code the CLI uses when the error
escapes a command.
"""


class AegruError(Exception):
    exit_code = 1


class ConfigError(AegruError, ValueError):
    """Invalid hyperparameter or configuration value."""

    exit_code = 2

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ContractError(AegruError, ValueError):
    """A documented precondition was violated by the caller."""

    exit_code = 2


class DimensionError(ContractError):
    pass


class DomainError(ContractError):
    """Value outside the mathematical domain of an operation."""


class UndefinedScoreError(ContractError):
    pass


class InsufficientDataError(AegruError, ValueError):
    exit_code = 3


class FormatError(AegruError):
    """Malformed NDR recording or AEGW checkpoint file."""

    exit_code = 3

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class NumericError(AegruError, FloatingPointError):
    """Training produced a non-finite loss."""

    exit_code = 4

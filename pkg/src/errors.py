# src/errors.py
"""
Exception hierarchy for DesignerGAN.

Every error carries the process exit code the CLI maps it to:
0 success, 2 config, 3 data, 4 input contract, 5 numeric failure.
"""


class DesignerGanError(Exception):
    exit_code = 1


class ConfigError(DesignerGanError, ValueError):
    """Invalid configuration or an architecture/shape configuration mismatch."""
    exit_code = 2

    def __init__(self, message: str, key: str = None):
        super().__init__(message)
        self.key = key


class UsageError(DesignerGanError, ValueError):
    exit_code = 2


class DataError(DesignerGanError):
    """Dataset, manifest or file content problem. `row` names the offending record when known."""
    exit_code = 3

    def __init__(self, message: str, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class CheckpointError(DataError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class InputContractError(DesignerGanError):
    exit_code = 4


class ShapeError(InputContractError, ValueError):
    pass


class NumericError(DesignerGanError, ArithmeticError):
    exit_code = 5

"""Exception hierarchy shared by the library and the CLI.

Every error carries a stable ``code`` string and the process exit status the
CLI should use for it (1 computation, 2 I/O, 3 configuration).
"""

from __future__ import annotations


class AppGrowthError(Exception):
    code = "E_GENERIC"
    exit_status = 1


class InputError(AppGrowthError, ValueError):
    """A precondition on arguments or data does not hold."""

    code = "E_INPUT"


class IngestError(InputError):
    """A file could not be read or does not match its declared schema."""

    code = "E_INGEST"
    exit_status = 2

    def __init__(self, message: str, *, path=None, row: int | None = None,
                 column: str | None = None):
        where = []
        if path is not None:
            where.append(f"file {path}")
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        full = f"{message} ({', '.join(where)})" if where else message
        super().__init__(full)
        self.path = path
        self.row = row
        self.column = column


class MissingFileError(IngestError):
    code = "E_IO_MISSING"


class ConfigError(AppGrowthError, ValueError):
    code = "E_CONFIG"
    exit_status = 3


class ComputationError(AppGrowthError, RuntimeError):
    """A numerical routine failed (non-finite objective, no MLE, ...)."""

    code = "E_COMPUTE"


class PerfectSeparationError(ComputationError):
    code = "E_SEPARATION"


class UndefinedCorrelationError(InputError):
    code = "E_ZERO_VARIANCE"

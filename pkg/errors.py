# errors.py
from __future__ import annotations

from typing import Optional


class AlpineError(Exception):
    """Base class for every error raised by this package."""


class ContractViolation(AlpineError, ValueError):
    pass


class DegenerateSequenceError(AlpineError, ValueError):
    pass


class CorpusError(AlpineError, ValueError):
    def __init__(self, message: str, line_no: Optional[int] = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class WeightArchiveError(AlpineError, ValueError):
    pass


class ReportWriteError(AlpineError, OSError):
    def __init__(self, path: str, cause: BaseException):
        super().__init__(f"Failed to write report {path}: {cause}")
        self.path = path

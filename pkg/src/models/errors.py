"""
錯誤類別
Exception hierarchy shared by the services and the command line
"""

from typing import Any, Optional


class PcfgError(Exception):
    """Base class; `exit_code` is what the CLI returns for it."""

    exit_code = 2

    def __init__(self, message: str, detail: Optional[Any] = None):
        super().__init__(message)
        self.message = message
        self.detail = detail

    def to_dict(self):
        """轉換為字典格式"""
        return {'error': type(self).__name__, 'detail': self.message}


class GrammarSyntaxError(PcfgError):
    """Grammar text does not follow the file format."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f'line {line}, column {column}: {message}')
        self.line = line
        self.column = column


class GrammarValidationError(PcfgError):
    """Grammar parsed but failed validation; `detail` holds the report."""


class NullRuleError(PcfgError):
    """Operation requires a grammar without null rules."""


class NonProductiveGrammarError(PcfgError):
    """The start symbol derives no terminal string."""


class ExpressionSyntaxError(PcfgError):
    """User-supplied expression text is malformed."""


class NotInLanguageError(PcfgError):
    """A terminal string is not derivable by the family's grammar."""


class DatasetError(PcfgError):
    """Dataset file is missing, empty or has a bad header."""


class TemplateError(PcfgError):
    """Template cannot be fitted by linear least squares."""


class UnsupportedGrammarError(PcfgError):
    """Expression probability refused for a grammar outside the known families."""

    exit_code = 3


class NumericGuardError(PcfgError):
    """A cost or range guard refused the computation."""

    exit_code = 3


class ConvergenceError(PcfgError):
    """Iteration did not converge; `detail` holds the last iterate."""

    exit_code = 3

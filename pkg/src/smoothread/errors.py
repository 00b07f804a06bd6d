"""Exception hierarchy shared by all modules.

Every error carries an ``exit_code`` used by the CLI; the codes are stable.
"""

from __future__ import annotations


class SmoothReadError(Exception):
    exit_code = 1


class ConfigError(SmoothReadError, ValueError):
    exit_code = 2


class EmptyInput(SmoothReadError, ValueError):
    exit_code = 3


class InvalidSummary(SmoothReadError, ValueError):
    exit_code = 4


class ProtocolError(SmoothReadError):
    """Model output could not be read as a contextual summary."""

    exit_code = 4

    def __init__(self, message: str, step_index: int | None = None):
        if step_index is not None:
            message = f"step {step_index}: {message}"
        super().__init__(message)
        self.step_index = step_index


class NoDecision(ProtocolError):
    pass


class MissingAnswer(ProtocolError):
    pass


class MalformedSummary(ProtocolError):
    pass


class BackendError(SmoothReadError):
    exit_code = 5


class SessionClosed(BackendError):
    pass


class UnsupportedTask(BackendError):
    pass


class RemoteUnavailable(BackendError):
    pass


class RemoteProtocolError(BackendError):
    pass


class IoError(SmoothReadError, OSError):
    exit_code = 6


class InvalidOffset(SmoothReadError, ValueError):
    exit_code = 2


class InsufficientPool(SmoothReadError, ValueError):
    exit_code = 2


class InvalidParams(SmoothReadError, ValueError):
    exit_code = 2


class IncompatibleTrace(SmoothReadError, ValueError):
    exit_code = 2


class EmptySuite(SmoothReadError, ValueError):
    exit_code = 7


class EmptyReport(SmoothReadError, ValueError):
    exit_code = 7

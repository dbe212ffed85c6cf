"""Exception hierarchy shared by every GIN module."""

from typing import Optional


class GinError(Exception):
    """Base class for all GIN errors"""

    exit_code = 1


class MissingSigner(GinError):
    pass


class MalformedTuple(GinError):
    pass


class InvalidSignature(GinError):
    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class UnroutablePattern(GinError):
    """Pattern has no fixed slot, so there is no key to route it by"""


class FrameError(GinError):
    """Wire frame could not be decoded"""


class PeerUnreachable(GinError):
    exit_code = 4

    def __init__(self, address: str, reason: str = "unreachable"):
        super().__init__(f"{address}: {reason}")
        self.address = address
        self.reason = reason


class LookupFailed(GinError):
    exit_code = 4


class PartialStore(GinError):
    exit_code = 4

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class NoResponders(GinError):
    exit_code = 4


class NetworkDown(GinError):
    exit_code = 4


class DisconnectedQuery(GinError):
    pass


class QueryParseError(GinError):
    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ScriptError(GinError):
    def __init__(self, message: str, line: Optional[int] = None, position: Optional[int] = None):
        where = ""
        if line is not None:
            where = f"line {line}"
            if position is not None:
                where += f", position {position}"
            where += ": "
        super().__init__(f"{where}{message}")
        self.line = line
        self.position = position


class BindFailure(GinError):
    exit_code = 2


class BootstrapTimeout(GinError):
    exit_code = 3

"""Exception hierarchy shared by every module in the package."""


class TracebackError(Exception):
    pass


class ZeroInverse(TracebackError, ZeroDivisionError):
    pass


class PositionOutOfRange(TracebackError, ValueError):
    pass


class EmptyPathDeletion(TracebackError, ValueError):
    pass


class XExhausted(TracebackError):
    pass


class UnmarkedPacket(TracebackError, ValueError):
    pass


class DegenerateScheme(TracebackError, ValueError):
    pass


class InsufficientPairs(TracebackError):
    def __init__(self, msg, hop=None):
        super().__init__(msg)
        self.hop = hop


class DuplicateX(TracebackError, ValueError):
    pass


class InconsistentEvidence(TracebackError):
    pass


class KOutOfRange(TracebackError, IndexError):
    pass


class ZeroX(TracebackError, ValueError):
    pass


class AmbiguousChange(TracebackError):
    def __init__(self, msg, rows=()):
        super().__init__(msg)
        self.rows = list(rows)


class StreamExhausted(TracebackError):
    pass


class InsufficientBuffer(TracebackError):
    pass


class NoPath(TracebackError):
    pass


class EmptyIntersection(TracebackError):
    pass


class ConfigError(TracebackError, ValueError):
    pass

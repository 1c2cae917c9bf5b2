"""Exception types shared across the toolkit."""

from __future__ import annotations


class TraceAnalysisError(Exception):
    """Base class for all errors raised by this package."""


class MalformedRecord(TraceAnalysisError):
    """A trace line could not be parsed or fails field validation."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownEventKind(TraceAnalysisError):
    def __init__(self, line: int, kind: str):
        super().__init__(f"line {line}: unknown event kind {kind!r}")
        self.line = line
        self.kind = kind


class NonMonotonicTimestamp(TraceAnalysisError):
    def __init__(self, line: int, ts: int, prev_ts: int):
        super().__init__(f"line {line}: timestamp {ts} < previous {prev_ts}")
        self.line = line
        self.ts = ts
        self.prev_ts = prev_ts


class NestingViolation(TraceAnalysisError):
    """Entry/exit events of one family do not nest (exit without entry, or
    mismatched exit)."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SwitchConflict(TraceAnalysisError):
    """A context switch contradicts the recorded CPU occupancy (two threads
    running on one CPU, or one thread running on two)."""


class UnmatchedEnd(TraceAnalysisError):
    """A span end delimiter was seen with no matching open begin."""


class OverlappingSpan(TraceAnalysisError):
    """A span begin delimiter re-opened a span id that is still open."""


class RootConflict(TraceAnalysisError):
    """Two graphs with different roots were merged without a super-root."""


class TooFewSpans(TraceAnalysisError):
    """k-means was asked for more clusters than there are points."""


class EmptyCluster(TraceAnalysisError):
    """A representative graph was requested for an empty cluster."""


class InvalidParameter(TraceAnalysisError):
    """A scenario or CLI parameter is outside its allowed range."""

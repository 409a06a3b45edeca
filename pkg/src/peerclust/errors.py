"""Exception types shared across the package."""


class PeerclustError(Exception):
    """Base class for all package errors."""


class InvalidSpec(PeerclustError):
    """A spec/config object violates its invariants."""


class DimensionMismatch(PeerclustError):
    """Array arguments have incompatible shapes."""


class DisconnectedGraph(PeerclustError):
    """Custom edge list yields a disconnected graph."""


class RetriesExhausted(PeerclustError):
    """Random graph generation failed too many connectivity checks."""


class NoConvergence(PeerclustError):
    """Iterative solver hit its iteration cap before reaching tolerance.

    Carries the best estimate and its residual so callers can decide
    whether the partial result is usable.
    """

    def __init__(self, message, estimate=None, residual=None):
        super().__init__(message)
        self.estimate = estimate
        self.residual = residual


class ParseError(PeerclustError):
    """CSV/config parsing failed; reports row and column when known."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyFile(PeerclustError):
    """Input file contains no data rows."""


class RaggedRows(ParseError):
    """CSV rows have inconsistent field counts."""


class TooFewPoints(PeerclustError):
    """Dataset too small for the requested partition."""


class LengthMismatch(PeerclustError):
    """Label vectors being compared have different lengths."""


class EmptyInput(PeerclustError):
    """An operation received an empty input it cannot handle."""


class NonFiniteState(PeerclustError):
    """A center update produced a non-finite value.

    ``round_index``, ``user`` and ``cluster`` locate the first offending
    entry; ``trace`` holds the partial run trace collected so far.
    """

    def __init__(self, message, round_index=None, user=None, cluster=None, trace=None):
        super().__init__(message)
        self.round_index = round_index
        self.user = user
        self.cluster = cluster
        self.trace = trace

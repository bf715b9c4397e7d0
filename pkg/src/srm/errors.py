"""Exception types shared across the package."""

from __future__ import annotations


class SRMError(Exception):
    """Base class for all package errors."""


class ParseError(SRMError):
    """Structure file rejected, with source position."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        super().__init__(f"line {line}, col {col}: {message}" if line else message)


class ValidationError(SRMError):
    """Structure parsed but violates a declared invariant."""


class NotBracketGenerating(SRMError):
    """Bracket flag stopped growing below full rank within the depth cap."""

    def __init__(self, point, growth, depth_cap):
        self.point = tuple(point)
        self.growth = tuple(growth)
        self.depth_cap = depth_cap
        super().__init__(
            f"flag at {self.point} stalled at growth {self.growth} "
            f"below depth cap {depth_cap}"
        )


class ChartDegenerate(SRMError):
    """Adapted frame linearization is singular; no chart can be built."""


class TruncationNotGenerating(SRMError):
    """Weighted truncation lost bracket generation; chart is not privileged."""


class SingularQuotient(SRMError):
    """Graded level map does not reach the expected quotient dimension."""


class NotEquisingular(SRMError):
    """Submanifold fails the constant-restricted-growth test."""

    def __init__(self, message, witness=None):
        self.witness = witness
        super().__init__(message)


class StrataNotPartition(SRMError):
    """Declared strata fail the MC coverage/disjointness test on a region."""


class StepFailure(SRMError):
    """Numerical integration blew up or lost conservation beyond tolerance."""


class Unreachable(SRMError):
    """No admissible path found within budget; value would be meaningless."""

"""Exception hierarchy shared by all placehash modules."""


class PlacehashError(Exception):
    """Base class for every error raised by this package."""


class FormatError(PlacehashError):
    """A binary or CSV artifact is malformed (bad magic, truncation, duplicates)."""


class InvalidFeature(PlacehashError):
    """Feature data violates its invariants (NaN/Inf values, zero vector, bad shape)."""


class DimensionMismatch(PlacehashError):
    """Operands disagree on vector dimensionality or class count."""


class InvalidBitLength(PlacehashError):
    """Requested signature length is not a positive multiple of 64."""


class IncomparableSignatures(PlacehashError):
    """Signatures were produced by different hashers and cannot be compared."""


class IncomparableReports(PlacehashError):
    """Evaluation reports cover different query sets and cannot be tabulated together."""


class InvalidInput(PlacehashError):
    """A scalar argument is outside its documented domain."""


class InvalidThreshold(PlacehashError):
    """Ratio-test or class-probability threshold outside its valid range."""


class InvalidTolerance(PlacehashError):
    """Ground-truth frame tolerance outside the supported 1..5 band."""


class DuplicateGroundTruth(PlacehashError):
    """A query frame appears more than once in a ground-truth file."""


class MissingGroundTruth(PlacehashError):
    """A query frame has no ground-truth reference."""


class MissingClassProbabilities(PlacehashError):
    """Partitioned search requires per-record class probabilities that are absent."""


class IndexTooSmall(PlacehashError):
    """An index needs at least two entries for top-2 queries and the ratio test."""


class NoQueries(PlacehashError):
    """An evaluation or benchmark was invoked with an empty query set."""

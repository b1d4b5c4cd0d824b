"""Typed errors raised across the pipeline.

Everything inherits from EuphdetError so callers can catch the whole
family; the CLI maps these to its data-error exit code.
"""

from __future__ import annotations


class EuphdetError(Exception):
    """Root of all library errors."""


class MissingPet(EuphdetError):
    """Raw line contains no delimited term."""


class MultiplePets(EuphdetError):
    """Raw line contains more than one delimited term."""


class EmptyPet(EuphdetError):
    """Delimited span is empty after trimming."""


class EmptyDataset(EuphdetError):
    """Operation needs at least one example."""


class ZeroVector(EuphdetError):
    """Cosine distance is undefined for a zero-norm vector."""


class DimensionMismatch(EuphdetError):
    """Vectors (or bundle entries) disagree on dimensionality."""


class FormatError(EuphdetError):
    """On-disk artifact is malformed. Carries the byte offset when known."""

    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class EmptyTokens(EuphdetError):
    """Operation needs a non-empty token list."""


class SpanError(EuphdetError):
    """Span does not lie inside the text it refers to."""


class SpanAlignmentError(EuphdetError):
    """No embedded token overlaps the term span."""


class MissingSense(EuphdetError):
    """Sense inventory has no usable entry for a term."""


class MissingEmbedding(EuphdetError):
    """Bundle has no entry for a required sentence id."""


class ShapeError(EuphdetError):
    """Parallel sequences disagree in length (or are empty)."""


class EmptyDatastore(EuphdetError):
    """Nearest-neighbor query against a datastore with no entries."""


class RangeError(EuphdetError):
    """Numeric argument outside its documented range."""


class EvenEnsemble(EuphdetError):
    """Majority vote requires an odd number of voters."""


class UnknownExample(EuphdetError):
    """Correction refers to an id absent from the dataset."""

"""Exception hierarchy; the command line maps AdapterError to exit 1."""

from __future__ import annotations


class AdapterError(Exception):
    """Base class for everything this package raises on purpose."""


class CorpusFormatError(AdapterError):
    """Corpus CSV or delimited sentence violates the input contract."""


class InvalidSpec(AdapterError):
    """Export settings outside their documented ranges."""

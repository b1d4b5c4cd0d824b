"""Frozen-transformer embedding export into euphdet bundle directories."""

from .corpus import CorpusFormatError, ParsedRow, read_delimited_corpus
from .export import AdapterError, ExportReport, ExportSpec, export_embeddings

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "CorpusFormatError",
    "ExportReport",
    "ExportSpec",
    "ParsedRow",
    "export_embeddings",
    "read_delimited_corpus",
]

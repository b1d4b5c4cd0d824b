"""Reader for the delimited corpus CSV the detection pipeline consumes.

The schema is one row per sentence with columns id, text, label; text
marks exactly one term occurrence with angle brackets, as in
"She is <slim> and tall."  This module re-implements the parsing rules
from the format contract so the exporter stays decoupled from the
pipeline's own code.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import CorpusFormatError

OPEN_DELIM = "<"
CLOSE_DELIM = ">"
REQUIRED_COLUMNS = ("id", "text", "label")


@dataclass(frozen=True)
class ParsedRow:
    """One corpus sentence with the delimiters stripped.

    text is the undelimited sentence; span is the character range of the
    marked term inside it, end exclusive.
    """

    id: str
    text: str
    pet: str
    span: tuple[int, int]
    label: int


def parse_delimited(row_id: str, raw: str) -> ParsedRow:
    """Strip the single <...> marking and return the row with its span."""
    open_at = raw.find(OPEN_DELIM)
    if open_at == -1:
        raise CorpusFormatError(f"{row_id}: no {OPEN_DELIM!r} delimiter in {raw!r}")
    close_at = raw.find(CLOSE_DELIM, open_at + 1)
    if close_at == -1:
        raise CorpusFormatError(f"{row_id}: unclosed delimiter in {raw!r}")
    nested = raw.find(OPEN_DELIM, open_at + 1)
    if nested != -1 and nested < close_at:
        raise CorpusFormatError(f"{row_id}: nested delimiter in {raw!r}")
    if raw.find(OPEN_DELIM, close_at + 1) != -1:
        raise CorpusFormatError(f"{row_id}: more than one marked term in {raw!r}")
    inner = raw[open_at + 1 : close_at]
    if not inner.strip():
        raise CorpusFormatError(f"{row_id}: empty marked term in {raw!r}")
    text = raw[:open_at] + inner + raw[close_at + 1 :]
    return ParsedRow(
        id=row_id,
        text=text,
        pet=inner,
        span=(open_at, open_at + len(inner)),
        label=0,
    )


def read_delimited_corpus(path: str | Path) -> list[ParsedRow]:
    """Parse every row; ids must be unique and labels 0 or 1."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise CorpusFormatError(f"{path}: header lacks columns {missing}")
        rows: list[ParsedRow] = []
        seen: set[str] = set()
        for record in reader:
            row_id = record["id"]
            if row_id in seen:
                raise CorpusFormatError(f"{path}: duplicate id {row_id!r}")
            seen.add(row_id)
            if record["label"] not in ("0", "1"):
                raise CorpusFormatError(
                    f"{path}: {row_id}: label must be 0 or 1, got {record['label']!r}"
                )
            parsed = parse_delimited(row_id, record["text"])
            rows.append(
                ParsedRow(
                    id=parsed.id,
                    text=parsed.text,
                    pet=parsed.pet,
                    span=parsed.span,
                    label=int(record["label"]),
                )
            )
    return rows

"""Corpus records, delimited-term parsing, seeded splitting, per-term stats.

A corpus row is ``id,text,label`` where the text marks exactly one
potentially euphemistic term (PET) with delimiters, ``"<"``/``">"`` by
default.  Parsing strips the delimiters and records the span so the raw
line can be reconstructed byte for byte.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    EmptyDataset,
    EmptyPet,
    FormatError,
    MissingPet,
    MultiplePets,
    SpanError,
)

DEFAULT_DELIMITERS = ("<", ">")

TRAIN_FRACTION = 0.8
VALIDATION_FRACTION = 0.1


def normalize_pet(surface: str) -> str:
    """Canonical term form: lowercase, inner whitespace collapsed."""
    return " ".join(surface.split()).lower()


@dataclass(frozen=True)
class PetExample:
    """One labelled sentence with a single marked term.

    text is the sentence without delimiters, original casing kept.
    span is the character range of the term inside text; slicing it
    yields the term surface (case-insensitively, whitespace-normalized).
    label is 1 for euphemistic usage, 0 otherwise.
    """

    id: str
    text: str
    pet: str
    span: tuple[int, int]
    label: int

    def __post_init__(self):
        start, end = self.span
        if not (0 <= start < end <= len(self.text)):
            raise SpanError(f"{self.id}: span {self.span} outside text bounds")
        if normalize_pet(self.text[start:end]) != self.pet:
            raise SpanError(
                f"{self.id}: span slices {self.text[start:end]!r}, not {self.pet!r}"
            )
        if self.label not in (0, 1):
            raise FormatError(f"{self.id}: label must be 0 or 1, got {self.label!r}")


def parse_delimited_example(
    raw: str,
    id: str,
    label: int,
    delimiters: tuple[str, str] = DEFAULT_DELIMITERS,
) -> PetExample:
    """Parse one raw delimited line into a PetExample.

    Exactly one delimited span is required.  The recorded span covers the
    exact delimited substring, so re-inserting the delimiters reproduces
    the raw line byte for byte.
    """
    open_d, close_d = delimiters
    spans = []
    pos = 0
    while True:
        start = raw.find(open_d, pos)
        if start < 0:
            break
        end = raw.find(close_d, start + len(open_d))
        if end < 0:
            break
        spans.append((start, end))
        pos = end + len(close_d)
    if not spans:
        raise MissingPet(f"{id}: no {open_d}...{close_d} span in {raw!r}")
    if len(spans) > 1:
        raise MultiplePets(f"{id}: {len(spans)} delimited spans in {raw!r}")

    start, end = spans[0]
    surface = raw[start + len(open_d) : end]
    if not surface.strip():
        raise EmptyPet(f"{id}: delimited span is empty in {raw!r}")

    text = raw[:start] + surface + raw[end + len(close_d) :]
    return PetExample(
        id=id,
        text=text,
        pet=normalize_pet(surface),
        span=(start, start + len(surface)),
        label=label,
    )


def render_delimited(
    example: PetExample, delimiters: tuple[str, str] = DEFAULT_DELIMITERS
) -> str:
    """Inverse of parse_delimited_example."""
    start, end = example.span
    open_d, close_d = delimiters
    return (
        example.text[:start]
        + open_d
        + example.text[start:end]
        + close_d
        + example.text[end:]
    )


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[PetExample, ...]
    validation: tuple[PetExample, ...]
    test: tuple[PetExample, ...]
    seed: int

    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.validation), len(self.test))


def split_sizes(n: int) -> tuple[int, int, int]:
    """Floor-based 80/10/10 cut; the remainder goes to test."""
    n_train = int(n * TRAIN_FRACTION)
    n_val = int(n * VALIDATION_FRACTION)
    return (n_train, n_val, n - n_train - n_val)


def split_dataset(examples: list[PetExample], seed: int) -> DatasetSplit:
    """Deterministic unstratified shuffle-and-cut split.

    The permutation comes from numpy's seeded default generator, so the
    same (examples, seed) pair always yields the same partition.
    """
    if not examples:
        raise EmptyDataset("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(len(examples))
    shuffled = [examples[i] for i in order]
    n_train, n_val, _ = split_sizes(len(examples))
    return DatasetSplit(
        train=tuple(shuffled[:n_train]),
        validation=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
        seed=seed,
    )


@dataclass(frozen=True)
class PetStats:
    pet: str
    count: int
    positive_fraction: float


def compute_pet_stats(examples: list[PetExample]) -> list[PetStats]:
    """Per-term counts and positive rates, sorted by term."""
    counts: dict[str, int] = {}
    positives: dict[str, int] = {}
    for ex in examples:
        counts[ex.pet] = counts.get(ex.pet, 0) + 1
        positives[ex.pet] = positives.get(ex.pet, 0) + ex.label
    return [
        PetStats(pet=p, count=counts[p], positive_fraction=positives[p] / counts[p])
        for p in sorted(counts)
    ]


def relabel(example: PetExample, label: int) -> PetExample:
    return replace(example, label=label)


# ---------------------------------------------------------------------------
# CSV / manifest I/O

CORPUS_FIELDS = ["id", "text", "label"]


def read_corpus_csv(
    path: str | Path, delimiters: tuple[str, str] = DEFAULT_DELIMITERS
) -> list[PetExample]:
    """Load a delimited corpus CSV (columns id,text,label; ids unique)."""
    path = Path(path)
    examples: list[PetExample] = []
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [
            f for f in CORPUS_FIELDS if f not in reader.fieldnames
        ]:
            raise FormatError(f"{path}: header must contain {CORPUS_FIELDS}")
        for lineno, row in enumerate(reader, start=2):
            ex_id = (row["id"] or "").strip()
            if not ex_id:
                raise FormatError(f"{path}:{lineno}: empty id")
            if ex_id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate id {ex_id!r}")
            seen.add(ex_id)
            if row["label"] not in ("0", "1"):
                raise FormatError(
                    f"{path}:{lineno}: label must be 0 or 1, got {row['label']!r}"
                )
            examples.append(
                parse_delimited_example(
                    row["text"], id=ex_id, label=int(row["label"]), delimiters=delimiters
                )
            )
    return examples


def write_corpus_csv(
    path: str | Path,
    examples: list[PetExample] | tuple[PetExample, ...],
    delimiters: tuple[str, str] = DEFAULT_DELIMITERS,
) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CORPUS_FIELDS)
        for ex in examples:
            writer.writerow([ex.id, render_delimited(ex, delimiters), ex.label])


def write_split_manifest(path: str | Path, split: DatasetSplit) -> None:
    """Record seed, sizes and id membership of each part."""
    manifest = {
        "seed": split.seed,
        "sizes": {
            "train": len(split.train),
            "validation": len(split.validation),
            "test": len(split.test),
        },
        "ids": {
            "train": [ex.id for ex in split.train],
            "validation": [ex.id for ex in split.validation],
            "test": [ex.id for ex in split.test],
        },
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_split_manifest(path: str | Path) -> dict:
    with Path(path).open(encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("seed", "sizes", "ids"):
        if key not in manifest:
            raise FormatError(f"{path}: split manifest missing {key!r}")
    return manifest

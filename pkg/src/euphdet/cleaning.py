"""Mislabel flagging driven by sense substitution and embedding overlap.

The idea: substitute each marked term with its euphemistic paraphrase,
score how much the sentence meaning moved (greedy token-matching F1
over embeddings), and flag rows whose score sits on the wrong side of
the per-term median for their label.  Corrections are applied from a
reviewed CSV, never automatically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import PetExample, normalize_pet, relabel
from .embedding import EmbeddingBundle, MockEncoder, MockEncoderConfig
from .errors import (
    EmptyTokens,
    FormatError,
    MissingSense,
    ShapeError,
    SpanError,
    UnknownExample,
)

DEFAULT_MIN_COUNT = 10
DEFAULT_MAX_SKEW = 0.8

REASON_POS_BELOW = "pos-below-median"
REASON_NEG_ABOVE = "neg-above-median"


@dataclass(frozen=True)
class SenseEntry:
    """Paraphrases for one term: a euphemistic sense, optionally a literal one."""

    pet: str
    euph_sense: str
    noneuph_sense: str | None = None

    def __post_init__(self):
        if not self.pet:
            raise FormatError("sense entry with empty pet")
        if not self.euph_sense:
            raise FormatError(f"sense entry for {self.pet!r} lacks euph_sense")


SenseInventory = dict[str, SenseEntry]


def select_cleanable_pets(
    stats,
    min_count: int = DEFAULT_MIN_COUNT,
    max_skew: float = DEFAULT_MAX_SKEW,
) -> list[str]:
    """Terms frequent enough and balanced enough to clean.

    Keeps terms with count >= min_count whose majority-label share does
    not exceed max_skew; a share of exactly max_skew is kept.
    """
    keep = []
    for st in stats:
        skew = max(st.positive_fraction, 1.0 - st.positive_fraction)
        if st.count >= min_count and skew <= max_skew:
            keep.append(st.pet)
    return keep


def _begins_sentence(text: str, start: int) -> bool:
    before = text[:start]
    if not before.strip():
        return True
    stripped = before.rstrip()
    return len(stripped) < len(before) and stripped[-1] in ".!?"


def substitute_sense(example: PetExample, phrase: str) -> str:
    """Replace the term span with phrase; returns the new sentence.

    When the span opened a sentence, the first character of phrase takes
    the casing of the original first character; everything else is used
    verbatim.
    """
    if not phrase:
        raise SpanError(f"{example.id}: empty substitution phrase")
    start, end = example.span
    if not (0 <= start < end <= len(example.text)):
        raise SpanError(f"{example.id}: span {example.span} outside text")
    if _begins_sentence(example.text, start):
        first = example.text[start]
        if first.isupper():
            phrase = phrase[0].upper() + phrase[1:]
        elif first.islower():
            phrase = phrase[0].lower() + phrase[1:]
    return example.text[:start] + phrase + example.text[end:]


def bertscore_f1(candidate_vectors: np.ndarray, reference_vectors: np.ndarray) -> float:
    """Greedy-matching F1 between two token-embedding matrices.

    Precision is the mean over candidate tokens of the best cosine
    similarity against any reference token; recall is symmetric; F1 is
    their harmonic mean, 0 when P + R == 0.  No idf weighting, no
    baseline rescaling.
    """
    cand = np.asarray(candidate_vectors, dtype=np.float64)
    ref = np.asarray(reference_vectors, dtype=np.float64)
    if cand.ndim != 2 or ref.ndim != 2:
        raise ShapeError("token embeddings must be 2-d matrices")
    if cand.shape[0] == 0 or ref.shape[0] == 0:
        raise EmptyTokens("bertscore needs at least one token on each side")
    if cand.shape[1] != ref.shape[1]:
        raise ShapeError(f"dimensions differ: {cand.shape[1]} vs {ref.shape[1]}")
    sims = _normalize_rows(cand) @ _normalize_rows(ref).T
    precision = float(sims.max(axis=1).mean())
    recall = float(sims.max(axis=0).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return matrix / safe


@dataclass(frozen=True)
class CleanFlag:
    id: str
    pet: str
    label: int
    bertscore: float
    median: float
    reason: str


def substituted_id(example_id: str) -> str:
    """Bundle key for the euphemistic-sense substitution of a sentence."""
    return f"{example_id}::euph"


def add_substituted_entries(
    bundle: EmbeddingBundle,
    examples: list[PetExample],
    inventory: SenseInventory,
    config: MockEncoderConfig | None = None,
) -> EmbeddingBundle:
    """Widen a bundle with mock encodings of the substituted sentences.

    Entries already present are kept as they are, so bundles produced by
    a real encoder win over the mock fallback.
    """
    config = config or MockEncoderConfig(dimension=bundle.dimension)
    encoder = MockEncoder(config)
    extra = {}
    for ex in examples:
        key = substituted_id(ex.id)
        if key in bundle.entries or key in extra:
            continue
        entry = inventory.get(ex.pet)
        if entry is None:
            raise MissingSense(f"no sense inventory entry for {ex.pet!r}")
        extra[key] = encoder.encode(substitute_sense(ex, entry.euph_sense))
    return bundle.with_entries(extra)


def score_substitutions(
    examples: list[PetExample],
    inventory: SenseInventory,
    bundle: EmbeddingBundle,
) -> list[tuple[PetExample, float]]:
    """Per-example greedy F1 between each sentence and its substitution."""
    scored = []
    for ex in examples:
        if ex.pet not in inventory:
            raise MissingSense(f"no sense inventory entry for {ex.pet!r}")
        original = bundle.require(ex.id)
        substituted = bundle.require(substituted_id(ex.id))
        scored.append((ex, bertscore_f1(original.vectors, substituted.vectors)))
    return scored


def median_flags(
    scored: list[tuple[PetExample, float]], median: float | None = None
) -> list[CleanFlag]:
    """Apply the half rule: positives strictly below the median and
    negatives strictly above it are flagged; ties at the median are not.
    """
    if not scored:
        return []
    if median is None:
        median = float(np.median([score for _, score in scored]))
    flags = []
    for ex, score in scored:
        if ex.label == 1 and score < median:
            reason = REASON_POS_BELOW
        elif ex.label == 0 and score > median:
            reason = REASON_NEG_ABOVE
        else:
            continue
        flags.append(
            CleanFlag(
                id=ex.id,
                pet=ex.pet,
                label=ex.label,
                bertscore=score,
                median=median,
                reason=reason,
            )
        )
    return flags


def flag_mislabelled(
    examples: list[PetExample],
    inventory: SenseInventory,
    bundle: EmbeddingBundle,
) -> list[CleanFlag]:
    """Flag suspicious rows among examples sharing one term."""
    pets = {ex.pet for ex in examples}
    if len(pets) > 1:
        raise ShapeError(f"examples span several terms: {sorted(pets)}")
    return median_flags(score_substitutions(examples, inventory, bundle))


def flag_corpus(
    examples: list[PetExample],
    inventory: SenseInventory,
    bundle: EmbeddingBundle,
    pets: list[str],
    median_scope: str = "pet",
) -> list[CleanFlag]:
    """Run flagging over the selected terms.

    median_scope "pet" compares each row against its own term's median;
    "global" pools every scored row into a single median.
    """
    if median_scope not in ("pet", "global"):
        raise FormatError(f"median_scope must be 'pet' or 'global', got {median_scope!r}")
    wanted = set(pets)
    by_pet: dict[str, list[PetExample]] = {}
    for ex in examples:
        if ex.pet in wanted:
            by_pet.setdefault(ex.pet, []).append(ex)
    flags: list[CleanFlag] = []
    if median_scope == "global":
        scored: list[tuple[PetExample, float]] = []
        for pet in sorted(by_pet):
            scored.extend(score_substitutions(by_pet[pet], inventory, bundle))
        flags = median_flags(scored)
    else:
        for pet in sorted(by_pet):
            flags.extend(flag_mislabelled(by_pet[pet], inventory, bundle))
    return flags


# ---------------------------------------------------------------------------
# Corrections


@dataclass(frozen=True)
class Correction:
    """Reviewed verdict for one flagged row; new_label None means keep."""

    id: str
    new_label: int | None

    def __post_init__(self):
        if self.new_label not in (0, 1, None):
            raise FormatError(f"{self.id}: new_label must be 0, 1 or keep")


@dataclass(frozen=True)
class AuditEntry:
    id: str
    old_label: int
    new_label: int
    changed: bool


def apply_corrections(
    examples: list[PetExample], corrections: list[Correction]
) -> tuple[list[PetExample], list[AuditEntry]]:
    """Relabel rows named by the corrections; audit every verdict.

    Keep-original corrections leave the row untouched but still produce
    an audit entry.  Rows not named are passed through unchanged.
    """
    by_id = {ex.id: ex for ex in examples}
    audit: list[AuditEntry] = []
    new_labels: dict[str, int] = {}
    for corr in corrections:
        if corr.id not in by_id:
            raise UnknownExample(f"correction for unknown id {corr.id!r}")
        old = by_id[corr.id].label
        new = old if corr.new_label is None else corr.new_label
        audit.append(
            AuditEntry(id=corr.id, old_label=old, new_label=new, changed=new != old)
        )
        if new != old:
            new_labels[corr.id] = new
    out = [
        relabel(ex, new_labels[ex.id]) if ex.id in new_labels else ex
        for ex in examples
    ]
    return out, audit


# ---------------------------------------------------------------------------
# CSV I/O

FLAG_FIELDS = ["id", "pet", "label", "bertscore", "median", "reason"]


def write_flags_csv(path: str | Path, flags: list[CleanFlag]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FLAG_FIELDS)
        for flag in flags:
            writer.writerow(
                [flag.id, flag.pet, flag.label, repr(flag.bertscore),
                 repr(flag.median), flag.reason]
            )


def read_flags_csv(path: str | Path) -> list[CleanFlag]:
    flags = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != FLAG_FIELDS:
            raise FormatError(f"{path}: header must be {FLAG_FIELDS}")
        for row in reader:
            if row["reason"] not in (REASON_POS_BELOW, REASON_NEG_ABOVE):
                raise FormatError(f"{path}: bad reason {row['reason']!r}")
            flags.append(
                CleanFlag(
                    id=row["id"],
                    pet=row["pet"],
                    label=int(row["label"]),
                    bertscore=float(row["bertscore"]),
                    median=float(row["median"]),
                    reason=row["reason"],
                )
            )
    return flags


def read_corrections_csv(path: str | Path) -> list[Correction]:
    corrections = []
    seen: set[str] = set()
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "new_label"]:
            raise FormatError(f"{path}: header must be id,new_label")
        for lineno, row in enumerate(reader, start=2):
            if row["id"] in seen:
                raise FormatError(f"{path}:{lineno}: duplicate correction {row['id']!r}")
            seen.add(row["id"])
            value = row["new_label"].strip()
            if value == "keep":
                corrections.append(Correction(id=row["id"], new_label=None))
            elif value in ("0", "1"):
                corrections.append(Correction(id=row["id"], new_label=int(value)))
            else:
                raise FormatError(
                    f"{path}:{lineno}: new_label must be 0, 1 or keep, got {value!r}"
                )
    return corrections


def write_audit_csv(path: str | Path, audit: list[AuditEntry]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "old_label", "new_label", "changed"])
        for entry in audit:
            writer.writerow(
                [entry.id, entry.old_label, entry.new_label, int(entry.changed)]
            )


def read_audit_csv(path: str | Path) -> list[AuditEntry]:
    out: list[AuditEntry] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "old_label", "new_label", "changed"]:
            raise FormatError(f"{path}: header must be id,old_label,new_label,changed")
        for row in reader:
            out.append(
                AuditEntry(
                    id=row["id"],
                    old_label=int(row["old_label"]),
                    new_label=int(row["new_label"]),
                    changed=bool(int(row["changed"])),
                )
            )
    return out


def read_sense_inventory_csv(path: str | Path) -> SenseInventory:
    """Load pet,euph_sense,noneuph_sense rows; empty noneuph is allowed."""
    inventory: SenseInventory = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["pet", "euph_sense", "noneuph_sense"]:
            raise FormatError(f"{path}: header must be pet,euph_sense,noneuph_sense")
        for lineno, row in enumerate(reader, start=2):
            pet = normalize_pet(row["pet"])
            if pet in inventory:
                raise FormatError(f"{path}:{lineno}: duplicate pet {pet!r}")
            noneuph = (row["noneuph_sense"] or "").strip() or None
            inventory[pet] = SenseEntry(
                pet=pet, euph_sense=row["euph_sense"].strip(), noneuph_sense=noneuph
            )
    return inventory


def write_sense_inventory_csv(path: str | Path, inventory: SenseInventory) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pet", "euph_sense", "noneuph_sense"])
        for pet in sorted(inventory):
            entry = inventory[pet]
            writer.writerow([entry.pet, entry.euph_sense, entry.noneuph_sense or ""])

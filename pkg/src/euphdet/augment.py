"""Corpus augmentation from an external sentence stream.

Two miners produce extra labelled rows:

- representation-distance mining (provenance ``euphaug-r``): retrieve
  sentences containing a known term and assign a label from the cosine
  distances to that term's training sentences via a two-threshold rule;
- sense substitution (provenance ``euphaug-s``): retrieve sentences
  containing a sense paraphrase, swap the term in, and label by which
  sense was matched.

The distance rule is kept in its literal published form by default; the
``literal_mode=False`` reading differs only in the near-accept branch
(see decide_label).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import PetExample, normalize_pet, parse_delimited_example, render_delimited
from .cleaning import SenseInventory, _begins_sentence
from .embedding import EmbeddingBundle, MockEncoder, cosine_distance, tokenize, tokenize_with_offsets
from .errors import EuphdetError, FormatError, RangeError, ShapeError

PROVENANCE_DISTANCE = "euphaug-r"
PROVENANCE_SENSE = "euphaug-s"

BRANCH_FAR = "far-accept"
BRANCH_NEAR = "near-accept"
BRANCH_SENSE_EUPH = "sense-euph"
BRANCH_SENSE_NONEUPH = "sense-noneuph"

DEFAULT_N_MAX = 20


@dataclass(frozen=True)
class AugmentThresholds:
    """Distance thresholds for the mining rule.

    delta is the far threshold, epsilon the near threshold; both live on
    the cosine-distance scale [0, 2] and epsilon must not exceed delta.
    """

    delta: float = 1.0
    epsilon: float = 0.15
    n_max: int = DEFAULT_N_MAX
    literal_mode: bool = True

    def __post_init__(self):
        if not (0.0 <= self.delta <= 2.0):
            raise RangeError(f"delta must be in [0, 2], got {self.delta}")
        if not (0.0 <= self.epsilon <= 2.0):
            raise RangeError(f"epsilon must be in [0, 2], got {self.epsilon}")
        if self.epsilon > self.delta:
            raise RangeError(
                f"epsilon ({self.epsilon}) must not exceed delta ({self.delta})"
            )
        if self.n_max < 1:
            raise RangeError(f"n_max must be >= 1, got {self.n_max}")


@dataclass(frozen=True)
class Decision:
    accepted: bool
    label: int | None = None
    branch: str | None = None


def decide_label(
    dists: list[float], labels: list[int], thresholds: AugmentThresholds
) -> Decision:
    """Two-threshold accept/reject rule over a candidate's distances.

    M indexes the farthest training sentence, m the nearest (ties go to
    the lowest index).  Far-accept fires when dist_M clears delta and
    dominates; it assigns label_M.  Near-accept fires when dist_m is
    within epsilon and dominates; in literal mode it assigns
    1 - label_M, in the alternative reading label_m.  Anything else is
    rejected.
    """
    if len(dists) != len(labels):
        raise ShapeError(f"{len(dists)} distances vs {len(labels)} labels")
    if not dists:
        raise ShapeError("decision needs at least one distance")
    big = max(range(len(dists)), key=lambda i: dists[i])
    small = min(range(len(dists)), key=lambda i: dists[i])
    # max()/min() return the first extremal index, which is the tie rule.
    far_margin = abs(dists[big] - thresholds.delta)
    near_margin = abs(dists[small] - thresholds.epsilon)
    if dists[big] >= thresholds.delta and far_margin > near_margin:
        return Decision(accepted=True, label=labels[big], branch=BRANCH_FAR)
    if dists[small] <= thresholds.epsilon and near_margin > far_margin:
        label = 1 - labels[big] if thresholds.literal_mode else labels[small]
        return Decision(accepted=True, label=label, branch=BRANCH_NEAR)
    return Decision(accepted=False)


@dataclass(frozen=True)
class Occurrence:
    """A corpus sentence containing the phrase, with the match span."""

    text: str
    span: tuple[int, int]
    source_offset: int


def find_occurrences(
    sentences: list[str], phrase: str, n_max: int = DEFAULT_N_MAX
) -> list[Occurrence]:
    """Up to n_max sentences containing phrase as a whole-token sequence.

    Matching is token-boundary and case-insensitive: "slim" never
    matches inside "slimmer".  Sentences come back in corpus order with
    the first match's character span.
    """
    needle = tokenize(phrase)
    if not needle:
        raise FormatError(f"phrase {phrase!r} has no tokens")
    found: list[Occurrence] = []
    for offset, sentence in enumerate(sentences):
        parts = tokenize_with_offsets(sentence)
        tokens = [tok for tok, _, _ in parts]
        for i in range(len(tokens) - len(needle) + 1):
            if tokens[i : i + len(needle)] == needle:
                span = (parts[i][1], parts[i + len(needle) - 1][2])
                found.append(Occurrence(text=sentence, span=span, source_offset=offset))
                break
        if len(found) >= n_max:
            break
    return found


@dataclass(frozen=True)
class AugmentedExample:
    """A mined example plus where it came from and which branch accepted it."""

    example: PetExample
    provenance: str
    branch: str
    source_offset: int

    def __post_init__(self):
        if self.provenance not in (PROVENANCE_DISTANCE, PROVENANCE_SENSE):
            raise FormatError(f"bad provenance {self.provenance!r}")
        if self.branch not in (
            BRANCH_FAR,
            BRANCH_NEAR,
            BRANCH_SENSE_EUPH,
            BRANCH_SENSE_NONEUPH,
        ):
            raise FormatError(f"bad branch {self.branch!r}")


def _pet_slug(pet: str) -> str:
    return pet.replace(" ", "-")


def run_distance_augment(
    train: list[PetExample],
    sentences: list[str],
    bundle: EmbeddingBundle,
    thresholds: AugmentThresholds,
    encoder: MockEncoder,
) -> list[AugmentedExample]:
    """Mine labelled rows for every term seen in training data.

    Candidates are deduplicated by exact text, both among themselves and
    against the training sentences, before the decision rule runs.
    Training sentence vectors come from the bundle; candidates are
    encoded on the fly with the given encoder.  Output is sorted by term
    then corpus offset.
    """
    by_pet: dict[str, list[PetExample]] = {}
    for ex in train:
        by_pet.setdefault(ex.pet, []).append(ex)
    train_texts = {ex.text for ex in train}

    out: list[AugmentedExample] = []
    for pet in sorted(by_pet):
        anchors = by_pet[pet]
        anchor_vectors = [bundle.require(ex.id).sentence_vector for ex in anchors]
        anchor_labels = [ex.label for ex in anchors]
        seen_texts: set[str] = set()
        for occ in find_occurrences(sentences, pet, thresholds.n_max):
            if occ.text in train_texts or occ.text in seen_texts:
                continue
            seen_texts.add(occ.text)
            candidate = encoder.encode(occ.text).sentence_vector
            dists = [cosine_distance(candidate, vec) for vec in anchor_vectors]
            decision = decide_label(dists, anchor_labels, thresholds)
            if not decision.accepted:
                continue
            example = PetExample(
                id=f"aug-r-{_pet_slug(pet)}-{occ.source_offset}",
                text=occ.text,
                pet=pet,
                span=occ.span,
                label=decision.label,
            )
            out.append(
                AugmentedExample(
                    example=example,
                    provenance=PROVENANCE_DISTANCE,
                    branch=decision.branch,
                    source_offset=occ.source_offset,
                )
            )
    return out


def run_sense_augment(
    inventory: SenseInventory,
    sentences: list[str],
    n_max: int = DEFAULT_N_MAX,
) -> list[AugmentedExample]:
    """Swap sense phrases for their term to mine labelled rows.

    Euphemistic-sense matches produce label 1, literal-sense matches
    label 0.  The inserted term keeps sentence-initial casing of the
    phrase it replaces.  Output is sorted by term then corpus offset.
    """
    out: list[AugmentedExample] = []
    for pet in sorted(inventory):
        entry = inventory[pet]
        senses = [(entry.euph_sense, 1, BRANCH_SENSE_EUPH)]
        if entry.noneuph_sense:
            senses.append((entry.noneuph_sense, 0, BRANCH_SENSE_NONEUPH))
        rows: list[AugmentedExample] = []
        seen_texts: set[str] = set()
        for phrase, label, branch in senses:
            for occ in find_occurrences(sentences, phrase, n_max):
                if occ.text in seen_texts:
                    continue
                seen_texts.add(occ.text)
                start, end = occ.span
                inserted = pet
                if _begins_sentence(occ.text, start):
                    first = occ.text[start]
                    if first.isupper():
                        inserted = inserted[0].upper() + inserted[1:]
                    elif first.islower():
                        inserted = inserted[0].lower() + inserted[1:]
                text = occ.text[:start] + inserted + occ.text[end:]
                example = PetExample(
                    id=f"aug-s-{_pet_slug(pet)}-{occ.source_offset}",
                    text=text,
                    pet=pet,
                    span=(start, start + len(inserted)),
                    label=label,
                )
                rows.append(
                    AugmentedExample(
                        example=example,
                        provenance=PROVENANCE_SENSE,
                        branch=branch,
                        source_offset=occ.source_offset,
                    )
                )
        rows.sort(key=lambda aug: aug.source_offset)
        out.extend(rows)
    return out


def check_no_id_collision(
    augmented: list[AugmentedExample], reserved_ids: set[str]
) -> None:
    """Augmented ids must never collide with existing split ids."""
    clashes = sorted(
        {aug.example.id for aug in augmented} & set(reserved_ids)
    )
    if clashes:
        raise FormatError(f"augmented ids collide with split ids: {clashes[:5]}")


# ---------------------------------------------------------------------------
# I/O

AUGMENTED_FIELDS = ["id", "text", "label", "provenance", "branch", "source_offset"]


def read_external_corpus(path: str | Path) -> list[str]:
    """One sentence per line; blank lines are kept out of the stream."""
    with Path(path).open(encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def write_augmented_csv(
    path: str | Path,
    augmented: list[AugmentedExample],
    delimiters: tuple[str, str] = ("<", ">"),
) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AUGMENTED_FIELDS)
        for aug in augmented:
            rendered = render_delimited(aug.example, delimiters)
            # Mined sentences may contain stray delimiter characters that
            # would not survive a read-back; fail loudly instead.
            try:
                parsed = parse_delimited_example(
                    rendered, id=aug.example.id, label=aug.example.label,
                    delimiters=delimiters,
                )
            except EuphdetError as err:
                raise FormatError(
                    f"{aug.example.id}: rendered sentence does not parse "
                    f"back: {err}"
                ) from err
            if parsed != aug.example:
                raise FormatError(
                    f"{aug.example.id}: sentence does not round-trip through "
                    f"delimiters (stray {delimiters[0]!r}/{delimiters[1]!r}?)"
                )
            writer.writerow(
                [
                    aug.example.id,
                    rendered,
                    aug.example.label,
                    aug.provenance,
                    aug.branch,
                    aug.source_offset,
                ]
            )


def read_augmented_csv(
    path: str | Path, delimiters: tuple[str, str] = ("<", ">")
) -> list[AugmentedExample]:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != AUGMENTED_FIELDS:
            raise FormatError(f"{path}: header must be {AUGMENTED_FIELDS}")
        for row in reader:
            example = parse_delimited_example(
                row["text"], id=row["id"], label=int(row["label"]), delimiters=delimiters
            )
            out.append(
                AugmentedExample(
                    example=example,
                    provenance=row["provenance"],
                    branch=row["branch"],
                    source_offset=int(row["source_offset"]),
                )
            )
    return out

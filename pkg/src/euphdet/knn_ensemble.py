"""Nearest-neighbor probabilities, interpolation, voting, and metrics.

A datastore is just the training sentence vectors with their labels in
construction order.  Query probabilities weight the k nearest entries
(cosine distance, exp(-d) kernel) and normalize over the two classes;
they can then be convex-combined with a base classifier's output.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import PetExample
from .embedding import EmbeddingBundle, cosine_distance
from .errors import (
    EmptyDatastore,
    EvenEnsemble,
    FormatError,
    RangeError,
    ShapeError,
)

DEFAULT_K = 5
DEFAULT_LAMBDA = 0.25
LAMBDA_GRID = [round(0.1 * i, 1) for i in range(1, 10)]

DATASTORE_MANIFEST_NAME = "manifest.json"
DATASTORE_KEYS_NAME = "keys.bin"


@dataclass
class KnnDatastore:
    """Parallel keys/labels/ids; order is construction order."""

    keys: np.ndarray  # (n, d) float
    labels: np.ndarray  # (n,) int
    ids: list[str]

    def __post_init__(self):
        if len(self.keys) != len(self.labels) or len(self.keys) != len(self.ids):
            raise ShapeError(
                f"keys/labels/ids lengths differ: "
                f"{len(self.keys)}/{len(self.labels)}/{len(self.ids)}"
            )

    def __len__(self) -> int:
        return len(self.ids)


def build_datastore(
    examples: list[PetExample], bundle: EmbeddingBundle
) -> KnnDatastore:
    """Sentence vector and label per example, in input order."""
    vectors = [bundle.require(ex.id).sentence_vector for ex in examples]
    keys = (
        np.stack(vectors).astype(np.float64)
        if vectors
        else np.zeros((0, bundle.dimension))
    )
    return KnnDatastore(
        keys=keys,
        labels=np.array([ex.label for ex in examples], dtype=int),
        ids=[ex.id for ex in examples],
    )


def knn_probability(
    store: KnnDatastore,
    query: np.ndarray,
    k: int = DEFAULT_K,
    exclude_id: str | None = None,
) -> np.ndarray:
    """Class distribution from the k nearest stored sentences.

    Neighbors are ranked by cosine distance with ties broken toward the
    lower construction index; each contributes exp(-distance) to its
    label's mass.  exclude_id drops that entry first (leave-one-out when
    scoring a sentence that is itself in the store).
    """
    if k < 1:
        raise RangeError(f"k must be >= 1, got {k}")
    if len(store) == 0:
        raise EmptyDatastore("datastore has no entries")
    candidates = [
        i for i in range(len(store)) if exclude_id is None or store.ids[i] != exclude_id
    ]
    if not candidates:
        raise EmptyDatastore(f"datastore empty after excluding {exclude_id!r}")
    dists = [cosine_distance(query, store.keys[i]) for i in candidates]
    order = sorted(range(len(candidates)), key=lambda j: (dists[j], candidates[j]))
    mass = np.zeros(2, dtype=np.float64)
    for j in order[: min(k, len(candidates))]:
        mass[store.labels[candidates[j]]] += np.exp(-dists[j])
    return mass / mass.sum()


def interpolate(p_knn: np.ndarray, p_base: np.ndarray, lam: float) -> np.ndarray:
    """Componentwise convex combination lam * p_knn + (1 - lam) * p_base."""
    if not 0.0 <= lam <= 1.0:
        raise RangeError(f"lambda must be in [0, 1], got {lam}")
    p_knn = np.asarray(p_knn, dtype=np.float64)
    p_base = np.asarray(p_base, dtype=np.float64)
    if p_knn.shape != p_base.shape:
        raise ShapeError(f"shapes {p_knn.shape} and {p_base.shape} differ")
    return lam * p_knn + (1.0 - lam) * p_base


def majority_vote(votes) -> int:
    """Label chosen by more than half of an odd number of voters."""
    votes = list(votes)
    if len(votes) % 2 == 0:
        raise EvenEnsemble(f"need an odd number of voters, got {len(votes)}")
    bad = set(votes) - {0, 1}
    if bad:
        raise FormatError(f"votes must be 0 or 1, got {sorted(bad)}")
    return Counter(votes).most_common(1)[0][0]


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MacroMetrics:
    per_class: dict[int, ClassMetrics]
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def to_dict(self) -> dict:
        return {
            "per_class": {
                str(c): {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                }
                for c, m in self.per_class.items()
            },
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
        }


def _safe_div(num: float, den: float) -> float:
    return num / den if den != 0.0 else 0.0


def macro_metrics(gold, pred) -> MacroMetrics:
    """Per-class precision/recall/F1 and their unweighted means.

    Undefined ratios (empty denominators) count as 0, the usual
    convention for rare classes.
    """
    gold = list(gold)
    pred = list(pred)
    if len(gold) != len(pred):
        raise ShapeError(f"{len(gold)} gold vs {len(pred)} predicted labels")
    if not gold:
        raise ShapeError("metrics need at least one example")
    bad = (set(gold) | set(pred)) - {0, 1}
    if bad:
        raise FormatError(f"labels must be 0 or 1, got {sorted(bad)}")
    per_class = {}
    for c in (0, 1):
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        fp = sum(1 for g, p in zip(gold, pred) if g != c and p == c)
        fn = sum(1 for g, p in zip(gold, pred) if g == c and p != c)
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        f1 = _safe_div(2.0 * precision * recall, precision + recall)
        per_class[c] = ClassMetrics(precision=precision, recall=recall, f1=f1)
    return MacroMetrics(
        per_class=per_class,
        macro_precision=(per_class[0].precision + per_class[1].precision) / 2.0,
        macro_recall=(per_class[0].recall + per_class[1].recall) / 2.0,
        macro_f1=(per_class[0].f1 + per_class[1].f1) / 2.0,
    )


@dataclass(frozen=True)
class Prediction:
    """Scored sentence: class-1 probabilities at each stage, final label.

    p_knn is None when no datastore took part; then p_final == p_base.
    The hard label breaks argmax ties toward 0.
    """

    id: str
    p_base: float
    p_knn: float | None
    p_final: float
    label: int


def make_prediction(
    example_id: str,
    p_base: np.ndarray,
    p_knn: np.ndarray | None = None,
    lam: float = DEFAULT_LAMBDA,
) -> Prediction:
    if p_knn is None:
        p_final = np.asarray(p_base, dtype=np.float64)
        knn_scalar = None
    else:
        p_final = interpolate(p_knn, p_base, lam)
        knn_scalar = float(p_knn[1])
    return Prediction(
        id=example_id,
        p_base=float(p_base[1]),
        p_knn=knn_scalar,
        p_final=float(p_final[1]),
        label=int(p_final[1] > p_final[0]),
    )


# ---------------------------------------------------------------------------
# I/O

PREDICTION_FIELDS = ["id", "p_base_1", "p_knn_1", "p_final_1", "label"]


def write_predictions_csv(path: str | Path, predictions: list[Prediction]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_FIELDS)
        for p in predictions:
            writer.writerow(
                [
                    p.id,
                    repr(p.p_base),
                    "" if p.p_knn is None else repr(p.p_knn),
                    repr(p.p_final),
                    p.label,
                ]
            )


def read_predictions_csv(path: str | Path) -> list[Prediction]:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PREDICTION_FIELDS:
            raise FormatError(f"{path}: header must be {PREDICTION_FIELDS}")
        for row in reader:
            out.append(
                Prediction(
                    id=row["id"],
                    p_base=float(row["p_base_1"]),
                    p_knn=float(row["p_knn_1"]) if row["p_knn_1"] else None,
                    p_final=float(row["p_final_1"]),
                    label=int(row["label"]),
                )
            )
    return out


def write_label_csv(path: str | Path, rows: list[tuple[str, int]]) -> None:
    """Ensemble output: id,label only."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"])
        for example_id, label in rows:
            writer.writerow([example_id, label])


def read_label_csv(path: str | Path) -> list[tuple[str, int]]:
    """Read id,label pairs from any CSV carrying those two columns."""
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "label"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: need id and label columns")
        for row in reader:
            if row["label"] not in ("0", "1"):
                raise FormatError(f"{path}: label must be 0 or 1, got {row['label']!r}")
            out.append((row["id"], int(row["label"])))
    return out


def write_metrics_json(path: str | Path, metrics: MacroMetrics) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(metrics.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_datastore(directory: str | Path, store: KnnDatastore) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dimension = int(store.keys.shape[1]) if store.keys.ndim == 2 else 0
    manifest = {
        "format": "euphdet-datastore",
        "version": 1,
        "dimension": dimension,
        "count": len(store),
        "ids": store.ids,
        "labels": [int(v) for v in store.labels],
    }
    with (directory / DATASTORE_MANIFEST_NAME).open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with (directory / DATASTORE_KEYS_NAME).open("wb") as fh:
        fh.write(store.keys.astype("<f4").tobytes(order="C"))


def load_datastore(directory: str | Path) -> KnnDatastore:
    directory = Path(directory)
    manifest_path = directory / DATASTORE_MANIFEST_NAME
    if not manifest_path.exists():
        raise FormatError(f"{manifest_path}: missing manifest")
    with manifest_path.open(encoding="utf-8") as fh:
        manifest = json.load(fh)
    count = manifest["count"]
    dimension = manifest["dimension"]
    if count != len(manifest["ids"]) or count != len(manifest["labels"]):
        raise FormatError(f"{manifest_path}: count does not match ids/labels")
    data = (directory / DATASTORE_KEYS_NAME).read_bytes()
    expected = count * dimension * 4
    if len(data) != expected:
        raise FormatError(
            f"{directory / DATASTORE_KEYS_NAME}: expected {expected} bytes",
            byte_offset=min(len(data), expected),
        )
    keys = (
        np.frombuffer(data, dtype="<f4")
        .reshape(count, dimension)
        .astype(np.float64)
    )
    return KnnDatastore(
        keys=keys, labels=np.array(manifest["labels"], dtype=int), ids=manifest["ids"]
    )

"""Export frozen-transformer embeddings into a bundle directory.

The output layout is the detection pipeline's bundle contract:
manifest.json listing per-sentence tokens, character offsets and byte
offsets, next to vectors.bin holding float32 little-endian rows, one row
per kept token followed by one sentence row.  The sentence vector is the
encoder's first-position output; special tokens are dropped from the
token list so every emitted offset points into the undelimited text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from .corpus import ParsedRow, read_delimited_corpus
from .errors import AdapterError, InvalidSpec

MANIFEST_NAME = "manifest.json"
VECTORS_NAME = "vectors.bin"
DEFAULT_MAX_LEN = 512
# rows per forward pass within one same-length bucket
FORWARD_ROWS = 32


@dataclass(frozen=True)
class ExportSpec:
    """Settings for one export run; the model is never fine-tuned."""

    model: str
    corpus: str | Path
    out_dir: str | Path
    max_len: int = DEFAULT_MAX_LEN
    device: str = "cpu"

    def __post_init__(self):
        if self.max_len < 8:
            raise InvalidSpec(f"max_len must be >= 8, got {self.max_len}")


@dataclass(frozen=True)
class ExportReport:
    """What one run produced: counts plus the ids set aside."""

    exported: int
    truncated: list[str] = field(default_factory=list)
    rejects: list[str] = field(default_factory=list)


@dataclass
class _Prepared:
    row: ParsedRow
    input_ids: list[int]
    keep: list[int]
    tokens: list[str]
    offsets: list[tuple[int, int]]
    vectors: np.ndarray | None = None
    sentence: np.ndarray | None = None


def _span_covered(row: ParsedRow, offsets: list[tuple[int, int]]) -> bool:
    # every non-space character of the marked term must fall in a token
    start, end = row.span
    for position in range(start, end):
        if row.text[position].isspace():
            continue
        if not any(ts <= position < te for ts, te in offsets):
            return False
    return True


def _prepare(tokenizer, row: ParsedRow, max_len: int) -> tuple[_Prepared | None, bool]:
    full_length = len(tokenizer(row.text)["input_ids"])
    enc = tokenizer(
        row.text,
        truncation=True,
        max_length=max_len,
        return_offsets_mapping=True,
        return_special_tokens_mask=True,
    )
    was_truncated = full_length > len(enc["input_ids"])
    keep = [
        i
        for i, (special, (ts, te)) in enumerate(
            zip(enc["special_tokens_mask"], enc["offset_mapping"])
        )
        if special == 0 and te > ts
    ]
    offsets = [tuple(enc["offset_mapping"][i]) for i in keep]
    if not keep or not _span_covered(row, offsets):
        return None, was_truncated
    tokens = tokenizer.convert_ids_to_tokens([enc["input_ids"][i] for i in keep])
    return (
        _Prepared(
            row=row,
            input_ids=list(enc["input_ids"]),
            keep=keep,
            tokens=list(tokens),
            offsets=offsets,
        ),
        was_truncated,
    )


def _run_inference(model, prepared: list[_Prepared], device: str) -> None:
    # bucket by sequence length so no padding is ever needed
    buckets: dict[int, list[_Prepared]] = {}
    for item in prepared:
        buckets.setdefault(len(item.input_ids), []).append(item)
    with torch.no_grad():
        for length in sorted(buckets):
            bucket = buckets[length]
            for at in range(0, len(bucket), FORWARD_ROWS):
                chunk = bucket[at : at + FORWARD_ROWS]
                ids = torch.tensor(
                    [item.input_ids for item in chunk], dtype=torch.long, device=device
                )
                mask = torch.ones_like(ids)
                hidden = model(input_ids=ids, attention_mask=mask).last_hidden_state
                for item, states in zip(chunk, hidden.cpu()):
                    rows = states.numpy().astype("<f4")
                    item.vectors = rows[item.keep]
                    item.sentence = rows[0]


def _write_bundle(spec: ExportSpec, prepared: list[_Prepared], report: ExportReport):
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs: list[bytes] = []
    offset = 0
    dimension = int(prepared[0].sentence.shape[0]) if prepared else 0
    for item in prepared:
        rows = np.vstack([item.vectors, item.sentence[None, :]]).astype("<f4")
        blob = rows.tobytes(order="C")
        entries.append(
            {
                "id": item.row.id,
                "tokens": item.tokens,
                "token_offsets": [list(pair) for pair in item.offsets],
                "token_count": len(item.tokens),
                "byte_offset": offset,
                "empty": False,
            }
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format": "euphdet-bundle",
        "version": 1,
        "dimension": dimension,
        "count": len(entries),
        "entries": entries,
        "model": str(spec.model),
        "max_len": spec.max_len,
        "truncated": report.truncated,
        "rejects": report.rejects,
    }
    with (out_dir / MANIFEST_NAME).open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with (out_dir / VECTORS_NAME).open("wb") as fh:
        for blob in blobs:
            fh.write(blob)


def export_embeddings(spec: ExportSpec) -> ExportReport:
    """Run the frozen encoder over the corpus and write the bundle.

    Sentences longer than max_len are truncated from the right and their
    ids recorded under "truncated" in the manifest; rows whose marked
    term is no longer covered by any token offset are skipped and
    recorded under "rejects".
    """
    rows = read_delimited_corpus(spec.corpus)
    tokenizer = AutoTokenizer.from_pretrained(spec.model)
    model = AutoModel.from_pretrained(spec.model)
    model.eval()
    model.to(spec.device)

    prepared: list[_Prepared] = []
    truncated: list[str] = []
    rejects: list[str] = []
    for row in rows:
        item, was_truncated = _prepare(tokenizer, row, spec.max_len)
        if was_truncated:
            truncated.append(row.id)
        if item is None:
            rejects.append(row.id)
            continue
        prepared.append(item)
    if prepared:
        _run_inference(model, prepared, spec.device)
        dims = {item.sentence.shape[0] for item in prepared}
        if len(dims) != 1:
            raise AdapterError(f"encoder produced mixed dimensions {sorted(dims)}")
    report = ExportReport(
        exported=len(prepared), truncated=truncated, rejects=rejects
    )
    _write_bundle(spec, prepared, report)
    return report

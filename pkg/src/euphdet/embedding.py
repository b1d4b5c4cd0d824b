"""Deterministic mock sentence encoder and the on-disk embedding bundle.

The mock encoder exists so every downstream stage can run at desk scale
without a GPU: each token gets a pseudo-random unit vector derived only
from its bytes and a seed, so identical tokens embed identically across
runs, processes and implementations.  Not semantically meaningful.

Token vectors are drawn from a splitmix64 stream seeded with
``hash_seed XOR fnv1a64(token utf-8 bytes)``; each 64-bit output maps to
[0, 1) via ``(z >> 11) * 2**-53`` and then to [-1, 1).  Both primitives
use their published constants so a twin in another language can
reproduce the stream bit for bit at float32.

Bundle layout (shared with the external encoder adapter):

- ``manifest.json``: dimension, count, and one entry per id with the
  token strings, their character offsets into the undelimited sentence,
  token_count, the entry's byte_offset into vectors.bin, and an
  ``empty`` flag for sentences that tokenized to nothing.
- ``vectors.bin``: for each entry in manifest order, token_count rows of
  dimension float32 little-endian values followed by one sentence row.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, FormatError, MissingEmbedding, ZeroVector

MANIFEST_NAME = "manifest.json"
VECTORS_NAME = "vectors.bin"

FNV64_OFFSET_BASIS = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
SPLITMIX64_INCREMENT = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV64_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def splitmix64_stream(seed: int, count: int) -> list[int]:
    """First `count` outputs of a splitmix64 generator."""
    state = seed & _MASK64
    out = []
    for _ in range(count):
        state = (state + SPLITMIX64_INCREMENT) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z = z ^ (z >> 31)
        out.append(z)
    return out


def _is_punctuation(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    """Whitespace tokens, edge punctuation stripped, lowercased.

    Offsets point at the surviving characters in the original text, so
    downstream span alignment works on the undelimited sentence.
    Tokens that are all punctuation are dropped.
    """
    out: list[tuple[str, int, int]] = []
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        start, end = i, j
        while start < end and _is_punctuation(text[start]):
            start += 1
        while end > start and _is_punctuation(text[end - 1]):
            end -= 1
        if end > start:
            out.append((text[start:end].lower(), start, end))
        i = j
    return out


def tokenize(text: str) -> list[str]:
    return [tok for tok, _, _ in tokenize_with_offsets(text)]


@dataclass(frozen=True)
class SentenceEncoding:
    """Embeddings for one sentence: per-token rows plus a sentence vector.

    vectors has one row per token (possibly zero rows); sentence_vector
    always has unit norm when produced by the mock encoder.  empty is
    True when the sentence tokenized to nothing and the sentence vector
    fell back to the first basis vector.
    """

    tokens: tuple[str, ...]
    offsets: tuple[tuple[int, int], ...]
    vectors: np.ndarray
    sentence_vector: np.ndarray

    @property
    def empty(self) -> bool:
        return len(self.tokens) == 0

    @property
    def dimension(self) -> int:
        return int(self.sentence_vector.shape[0])


@dataclass(frozen=True)
class MockEncoderConfig:
    dimension: int = 64
    hash_seed: int = 0

    def __post_init__(self):
        if self.dimension < 2:
            raise DimensionMismatch(f"dimension must be >= 2, got {self.dimension}")


class MockEncoder:
    """Stateless hash-based encoder; encode() is a pure function."""

    def __init__(self, config: MockEncoderConfig | None = None):
        self.config = config or MockEncoderConfig()

    def token_vector(self, token: str) -> np.ndarray:
        d = self.config.dimension
        seed = (self.config.hash_seed & _MASK64) ^ fnv1a64(token.encode("utf-8"))
        raw = splitmix64_stream(seed, d)
        vec = np.array([(z >> 11) * 2.0**-53 for z in raw], dtype=np.float64)
        vec = vec * 2.0 - 1.0
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec = _basis_vector(d)
        else:
            vec = vec / norm
        return vec.astype(np.float32)

    def encode(self, text: str) -> SentenceEncoding:
        parts = tokenize_with_offsets(text)
        d = self.config.dimension
        if not parts:
            return SentenceEncoding(
                tokens=(),
                offsets=(),
                vectors=np.zeros((0, d), dtype=np.float32),
                sentence_vector=_basis_vector(d).astype(np.float32),
            )
        rows = np.stack([self.token_vector(tok) for tok, _, _ in parts])
        mean = rows.astype(np.float64).mean(axis=0)
        norm = float(np.linalg.norm(mean))
        sentence = _basis_vector(d) if norm == 0.0 else mean / norm
        return SentenceEncoding(
            tokens=tuple(tok for tok, _, _ in parts),
            offsets=tuple((s, e) for _, s, e in parts),
            vectors=rows,
            sentence_vector=sentence.astype(np.float32),
        )


def _basis_vector(dimension: int) -> np.ndarray:
    vec = np.zeros(dimension, dtype=np.float64)
    vec[0] = 1.0
    return vec


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cosine similarity, in [0, 2]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"shapes {u.shape} and {v.shape} differ")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine distance undefined for zero-norm vector")
    dist = 1.0 - float(np.dot(u, v)) / (nu * nv)
    return min(2.0, max(0.0, dist))


@dataclass
class EmbeddingBundle:
    """In-memory bundle: immutable after load; safe to share across threads."""

    dimension: int
    entries: dict[str, SentenceEncoding] = field(default_factory=dict)

    def require(self, sentence_id: str) -> SentenceEncoding:
        try:
            return self.entries[sentence_id]
        except KeyError:
            raise MissingEmbedding(f"no bundle entry for id {sentence_id!r}") from None

    def with_entries(self, extra: dict[str, SentenceEncoding]) -> "EmbeddingBundle":
        """New bundle with extra entries added (existing ids must not clash)."""
        merged = dict(self.entries)
        for key, enc in extra.items():
            if key in merged:
                raise FormatError(f"duplicate bundle id {key!r}")
            if enc.dimension != self.dimension:
                raise DimensionMismatch(
                    f"entry {key!r} has dimension {enc.dimension}, bundle {self.dimension}"
                )
            merged[key] = enc
        return EmbeddingBundle(dimension=self.dimension, entries=merged)


def encode_corpus(examples, config: MockEncoderConfig) -> EmbeddingBundle:
    """Mock-encode every example's undelimited text, keyed by id."""
    encoder = MockEncoder(config)
    entries = {ex.id: encoder.encode(ex.text) for ex in examples}
    return EmbeddingBundle(dimension=config.dimension, entries=entries)


def write_bundle(directory: str | Path, bundle: EmbeddingBundle) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest_entries = []
    offset = 0
    blobs: list[bytes] = []
    for sentence_id, enc in bundle.entries.items():
        if enc.dimension != bundle.dimension:
            raise DimensionMismatch(
                f"entry {sentence_id!r} has dimension {enc.dimension}, "
                f"bundle {bundle.dimension}"
            )
        rows = np.vstack(
            [enc.vectors.astype("<f4"), enc.sentence_vector.astype("<f4")[None, :]]
        )
        blob = rows.tobytes(order="C")
        manifest_entries.append(
            {
                "id": sentence_id,
                "tokens": list(enc.tokens),
                "token_offsets": [list(pair) for pair in enc.offsets],
                "token_count": len(enc.tokens),
                "byte_offset": offset,
                "empty": enc.empty,
            }
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format": "euphdet-bundle",
        "version": 1,
        "dimension": bundle.dimension,
        "count": len(manifest_entries),
        "entries": manifest_entries,
    }
    with (directory / MANIFEST_NAME).open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with (directory / VECTORS_NAME).open("wb") as fh:
        for blob in blobs:
            fh.write(blob)


def load_bundle(directory: str | Path) -> EmbeddingBundle:
    """Load and validate a bundle; FormatError pinpoints the first bad byte."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    vectors_path = directory / VECTORS_NAME
    if not manifest_path.exists():
        raise FormatError(f"{manifest_path}: missing manifest")
    if not vectors_path.exists():
        raise FormatError(f"{vectors_path}: missing vectors file")
    try:
        with manifest_path.open(encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON: {exc}") from exc

    for key in ("dimension", "count", "entries"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: manifest missing {key!r}")
    dimension = manifest["dimension"]
    if not isinstance(dimension, int) or dimension < 1:
        raise FormatError(f"{manifest_path}: bad dimension {dimension!r}")
    if manifest["count"] != len(manifest["entries"]):
        raise FormatError(
            f"{manifest_path}: count {manifest['count']} != "
            f"{len(manifest['entries'])} entries"
        )

    data = vectors_path.read_bytes()
    row_bytes = dimension * 4
    entries: dict[str, SentenceEncoding] = {}
    expected_offset = 0
    for entry in manifest["entries"]:
        for key in ("id", "tokens", "token_offsets", "token_count", "byte_offset"):
            if key not in entry:
                raise FormatError(f"{manifest_path}: entry missing {key!r}")
        sentence_id = entry["id"]
        if sentence_id in entries:
            raise FormatError(f"{manifest_path}: duplicate id {sentence_id!r}")
        token_count = entry["token_count"]
        if token_count != len(entry["tokens"]) or token_count != len(
            entry["token_offsets"]
        ):
            raise FormatError(
                f"{manifest_path}: {sentence_id!r} token_count {token_count} "
                f"does not match token lists"
            )
        if entry["byte_offset"] != expected_offset:
            raise FormatError(
                f"{manifest_path}: {sentence_id!r} byte_offset "
                f"{entry['byte_offset']} != expected",
                byte_offset=expected_offset,
            )
        size = (token_count + 1) * row_bytes
        if expected_offset + size > len(data):
            raise FormatError(
                f"{vectors_path}: truncated entry {sentence_id!r}",
                byte_offset=len(data),
            )
        rows = np.frombuffer(
            data, dtype="<f4", count=(token_count + 1) * dimension, offset=expected_offset
        ).reshape(token_count + 1, dimension)
        if not np.isfinite(rows).all():
            raise FormatError(
                f"{vectors_path}: non-finite value in entry {sentence_id!r}",
                byte_offset=expected_offset,
            )
        entries[sentence_id] = SentenceEncoding(
            tokens=tuple(entry["tokens"]),
            offsets=tuple((int(s), int(e)) for s, e in entry["token_offsets"]),
            vectors=rows[:-1].copy(),
            sentence_vector=rows[-1].copy(),
        )
        expected_offset += size
    if expected_offset != len(data):
        raise FormatError(
            f"{vectors_path}: {len(data) - expected_offset} trailing bytes",
            byte_offset=expected_offset,
        )
    return EmbeddingBundle(dimension=dimension, entries=entries)

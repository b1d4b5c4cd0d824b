from __future__ import annotations

import csv
from pathlib import Path

import pytest
import torch
from tokenizers import Tokenizer, models, normalizers, pre_tokenizers, processors
from transformers import BertConfig, BertModel, BertTokenizerFast

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "cat", "sat", "on", "mat", "he", "she", "was", "is", "a",
    "very", "quiet", "garden", "and", "tall", ".", ",",
    "switch", "##ed", "off", "slim", "pass", "away", "pet",
    "light", "##s", "in", "ward", "old", "man", "were",
]

CORPUS_ROWS = [
    ("r0", "the cat <sat> on the mat .", 1),
    ("r1", "he was <switched off> in the ward .", 1),
    ("r2", "she is <slim> and tall .", 0),
    ("r3", "the old man <passed away> .", 1),
    ("r4", "a very quiet <garden> .", 0),
    ("r5", "the <lights> were off .", 0),
    ("r6", "she is <slim> and tall .", 0),
    ("r7", "the pet was very <quiet> .", 0),
    ("r8", "he sat on a <mat> .", 0),
    ("r9", "the cat was in the <garden> .", 0),
]


def write_corpus(path: Path, rows: list[tuple[str, str, int]]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "text", "label"])
        writer.writerows(rows)
    return path


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory) -> Path:
    """Word-piece tokenizer plus a one-layer encoder, saved locally."""
    directory = tmp_path_factory.mktemp("tinybert")
    vocab = {token: index for index, token in enumerate(VOCAB)}
    tokenizer = Tokenizer(models.WordPiece(vocab, unk_token="[UNK]"))
    tokenizer.normalizer = normalizers.BertNormalizer(lowercase=True)
    tokenizer.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    tokenizer.post_processor = processors.TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B [SEP]",
        special_tokens=[("[CLS]", vocab["[CLS]"]), ("[SEP]", vocab["[SEP]"])],
    )
    BertTokenizerFast(tokenizer_object=tokenizer).save_pretrained(directory)
    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=32,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=64,
    )
    torch.manual_seed(0)
    BertModel(config).save_pretrained(directory)
    return directory


@pytest.fixture(scope="session")
def corpus_csv(tmp_path_factory) -> Path:
    return write_corpus(tmp_path_factory.mktemp("corpus") / "corpus.csv", CORPUS_ROWS)


@pytest.fixture()
def corpus_writer():
    return write_corpus

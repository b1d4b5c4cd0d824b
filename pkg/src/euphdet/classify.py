"""Span-sum and averaging classifiers over precomputed embeddings.

Two model families share one plain-gradient-descent loop:

- linear head: softmax regression on the sum of the token vectors that
  overlap the marked term span;
- deep averaging network: mean of all token vectors, one ReLU hidden
  layer with inverted dropout (training only, never on tokens), then a
  linear layer to two logits.

Everything is numpy float64 end to end and bitwise reproducible from
(seed, data, config).  Estimators follow sklearn conventions so they
compose with the usual tooling.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .corpus import PetExample
from .embedding import EmbeddingBundle
from .errors import (
    EmptyDataset,
    EmptyTokens,
    FormatError,
    RangeError,
    ShapeError,
    SpanAlignmentError,
)

INIT_SCALE = 0.05

PARAMS_MANIFEST_NAME = "manifest.json"
PARAMS_BIN_NAME = "params.bin"

MODEL_LINEAR_HEAD = "linear-head"
MODEL_DAN = "dan"


def pet_sum_embedding(example: PetExample, bundle: EmbeddingBundle) -> np.ndarray:
    """Componentwise sum of the token vectors overlapping the term span."""
    entry = bundle.require(example.id)
    start, end = example.span
    rows = [
        entry.vectors[i]
        for i, (ts, te) in enumerate(entry.offsets)
        if ts < end and te > start
    ]
    if not rows:
        raise SpanAlignmentError(
            f"{example.id}: no token overlaps span {example.span}"
        )
    return np.sum(np.asarray(rows, dtype=np.float64), axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.asarray(logits, dtype=np.float64)
    shifted = shifted - shifted.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


@dataclass
class LinearHeadParams:
    weight: np.ndarray  # (2, D)
    bias: np.ndarray  # (2,)

    def copy(self) -> "LinearHeadParams":
        return LinearHeadParams(self.weight.copy(), self.bias.copy())


@dataclass
class DanParams:
    hidden_weight: np.ndarray  # (H, D)
    hidden_bias: np.ndarray  # (H,)
    output_weight: np.ndarray  # (2, H)
    output_bias: np.ndarray  # (2,)
    dropout: float = 0.1

    def copy(self) -> "DanParams":
        return DanParams(
            self.hidden_weight.copy(),
            self.hidden_bias.copy(),
            self.output_weight.copy(),
            self.output_bias.copy(),
            self.dropout,
        )


def head_forward(params: LinearHeadParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.weight.shape[1],):
        raise ShapeError(f"feature shape {x.shape} vs weight {params.weight.shape}")
    return softmax(params.weight @ x + params.bias)


def dan_forward(
    params: DanParams,
    token_vectors: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    """Class probabilities for one sentence's token matrix.

    Dropout only ever applies to hidden units, only in train_mode, and
    needs a seeded rng there so runs stay reproducible.
    """
    probs, _ = _dan_forward_cache(params, token_vectors, train_mode, rng)
    return probs


def _dropout_mask(
    dropout: float, size: int, rng: np.random.Generator | int | None
) -> np.ndarray:
    if dropout == 0.0:
        return np.ones(size, dtype=np.float64)
    if not 0.0 <= dropout < 1.0:
        raise RangeError(f"dropout must be in [0, 1), got {dropout}")
    if rng is None:
        raise RangeError("train-mode dropout needs a seeded rng")
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    keep = (rng.random(size) >= dropout).astype(np.float64)
    return keep / (1.0 - dropout)


def _dan_forward_cache(params, token_vectors, train_mode, rng):
    tokens = np.asarray(token_vectors, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[0] == 0:
        raise EmptyTokens("deep averaging needs at least one token vector")
    if tokens.shape[1] != params.hidden_weight.shape[1]:
        raise ShapeError(
            f"token dimension {tokens.shape[1]} vs "
            f"weights {params.hidden_weight.shape[1]}"
        )
    z = tokens.mean(axis=0)
    pre = params.hidden_weight @ z + params.hidden_bias
    hidden = np.maximum(pre, 0.0)
    if train_mode:
        mask = _dropout_mask(params.dropout, hidden.shape[0], rng)
    else:
        mask = np.ones_like(hidden)
    dropped = hidden * mask
    probs = softmax(params.output_weight @ dropped + params.output_bias)
    return probs, (z, pre, dropped, mask)


def cross_entropy(probs: np.ndarray, label: int) -> float:
    return -float(np.log(probs[label]))


def head_gradients(params: LinearHeadParams, x: np.ndarray, label: int):
    """Analytic loss gradient for one example; returns (loss, grads)."""
    probs = head_forward(params, x)
    g = probs.copy()
    g[label] -= 1.0
    return cross_entropy(probs, label), LinearHeadParams(
        weight=np.outer(g, x), bias=g
    )


def dan_gradients(
    params: DanParams,
    token_vectors: np.ndarray,
    label: int,
    train_mode: bool = False,
    rng: np.random.Generator | int | None = None,
):
    """Analytic loss gradient for one example; returns (loss, grads)."""
    probs, (z, pre, dropped, mask) = _dan_forward_cache(
        params, token_vectors, train_mode, rng
    )
    g = probs.copy()
    g[label] -= 1.0
    d_dropped = params.output_weight.T @ g
    d_pre = d_dropped * mask * (pre > 0.0)
    grads = DanParams(
        hidden_weight=np.outer(d_pre, z),
        hidden_bias=d_pre,
        output_weight=np.outer(g, dropped),
        output_bias=g,
        dropout=params.dropout,
    )
    return cross_entropy(probs, label), grads


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    batch_size: int = 4
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise RangeError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise RangeError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise RangeError(f"epochs must be >= 0, got {self.epochs}")


def _validate_labels(y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError("labels must be a flat sequence")
    bad = set(np.unique(y)) - {0, 1}
    if bad:
        raise FormatError(f"labels must be 0 or 1, got {sorted(bad)}")
    return y.astype(int)


def _train_loop(n, config, init_params, axpy, example_step):
    """Shared mini-batch plain gradient descent.

    One seeded generator drives everything, in a fixed draw order: init
    first, then one permutation per epoch, then dropout inside each
    example step.  Returns (params, per-epoch mean losses).
    """
    rng = np.random.default_rng(config.seed)
    params = init_params(rng)
    trace: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, config.batch_size):
            batch = order[lo : lo + config.batch_size]
            grad_sum = None
            for idx in batch:
                loss, grads = example_step(params, int(idx), rng)
                loss_sum += loss
                grad_sum = grads if grad_sum is None else axpy(grad_sum, grads, 1.0)
            scale = -config.lr / len(batch)
            params = axpy(params, grad_sum, scale)
        trace.append(loss_sum / n)
    return params, trace


class LinearHeadClassifier(BaseEstimator, ClassifierMixin):
    """Softmax regression over fixed feature vectors (sklearn-style).

    fit expects X of shape (n, d) and binary labels.  Training is plain
    mini-batch gradient descent on mean cross-entropy; with epochs=0 the
    parameters are exactly the seeded initialization.
    """

    def __init__(self, lr: float = 1e-2, batch_size: int = 4, epochs: int = 10,
                 seed: int = 0):
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise EmptyDataset("fit needs a non-empty (n, d) feature matrix")
        y = _validate_labels(y)
        if len(y) != X.shape[0]:
            raise ShapeError(f"{X.shape[0]} rows vs {len(y)} labels")
        config = TrainConfig(self.lr, self.batch_size, self.epochs, self.seed)
        d = X.shape[1]

        def init(rng):
            return LinearHeadParams(
                weight=rng.uniform(-INIT_SCALE, INIT_SCALE, (2, d)),
                bias=rng.uniform(-INIT_SCALE, INIT_SCALE, 2),
            )

        def axpy(p, g, a):
            return LinearHeadParams(p.weight + a * g.weight, p.bias + a * g.bias)

        def step(params, idx, rng):
            return head_gradients(params, X[idx], int(y[idx]))

        params, trace = _train_loop(X.shape[0], config, init, axpy, step)
        self.params_ = params
        self.loss_trace_ = trace
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = d
        return self

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.stack([head_forward(self.params_, row) for row in X])

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return (probs[:, 1] > probs[:, 0]).astype(int)


class DanClassifier(BaseEstimator, ClassifierMixin):
    """Deep averaging network over per-sentence token matrices.

    X is a sequence of (tokens_i, d) arrays; dropout is applied to the
    hidden layer during fit only.
    """

    def __init__(self, hidden_size: int = 128, dropout: float = 0.1,
                 lr: float = 1e-2, batch_size: int = 4, epochs: int = 10,
                 seed: int = 0):
        self.hidden_size = hidden_size
        self.dropout = dropout
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y):
        X = [np.asarray(m, dtype=np.float64) for m in X]
        if not X:
            raise EmptyDataset("fit needs at least one token matrix")
        for m in X:
            if m.ndim != 2 or m.shape[0] == 0:
                raise EmptyTokens("every sentence needs at least one token vector")
        dims = {m.shape[1] for m in X}
        if len(dims) != 1:
            raise ShapeError(f"mixed token dimensions {sorted(dims)}")
        y = _validate_labels(y)
        if len(y) != len(X):
            raise ShapeError(f"{len(X)} sentences vs {len(y)} labels")
        config = TrainConfig(self.lr, self.batch_size, self.epochs, self.seed)
        d = dims.pop()
        h = self.hidden_size

        def init(rng):
            return DanParams(
                hidden_weight=rng.uniform(-INIT_SCALE, INIT_SCALE, (h, d)),
                hidden_bias=rng.uniform(-INIT_SCALE, INIT_SCALE, h),
                output_weight=rng.uniform(-INIT_SCALE, INIT_SCALE, (2, h)),
                output_bias=rng.uniform(-INIT_SCALE, INIT_SCALE, 2),
                dropout=self.dropout,
            )

        def axpy(p, g, a):
            return DanParams(
                p.hidden_weight + a * g.hidden_weight,
                p.hidden_bias + a * g.hidden_bias,
                p.output_weight + a * g.output_weight,
                p.output_bias + a * g.output_bias,
                p.dropout,
            )

        def step(params, idx, rng):
            return dan_gradients(params, X[idx], int(y[idx]), train_mode=True, rng=rng)

        params, trace = _train_loop(len(X), config, init, axpy, step)
        self.params_ = params
        self.loss_trace_ = trace
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = d
        return self

    def predict_proba(self, X) -> np.ndarray:
        return np.stack([dan_forward(self.params_, m, train_mode=False) for m in X])

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return (probs[:, 1] > probs[:, 0]).astype(int)


def resolve_features(kind: str, examples: list[PetExample], bundle: EmbeddingBundle):
    """Materialize model inputs up front so embedding gaps fail early."""
    if kind == MODEL_LINEAR_HEAD:
        return np.stack([pet_sum_embedding(ex, bundle) for ex in examples])
    if kind == MODEL_DAN:
        features = []
        for ex in examples:
            entry = bundle.require(ex.id)
            if entry.vectors.shape[0] == 0:
                raise EmptyTokens(f"{ex.id}: sentence has no token vectors")
            features.append(entry.vectors.astype(np.float64))
        return features
    raise FormatError(f"unknown model kind {kind!r}")


def train_classifier(
    kind: str,
    examples: list[PetExample],
    bundle: EmbeddingBundle,
    config: TrainConfig,
    hidden_size: int = 128,
    dropout: float = 0.1,
):
    """Fit a classifier of the given kind on examples drawn from bundle."""
    if not examples:
        raise EmptyDataset("training needs at least one example")
    features = resolve_features(kind, examples, bundle)
    labels = [ex.label for ex in examples]
    if kind == MODEL_LINEAR_HEAD:
        model = LinearHeadClassifier(
            lr=config.lr, batch_size=config.batch_size,
            epochs=config.epochs, seed=config.seed,
        )
    else:
        model = DanClassifier(
            hidden_size=hidden_size, dropout=dropout, lr=config.lr,
            batch_size=config.batch_size, epochs=config.epochs, seed=config.seed,
        )
    return model.fit(features, labels)


# ---------------------------------------------------------------------------
# Serialization: float32 little-endian blob plus a JSON manifest, the same
# convention the embedding bundle uses.


def _params_arrays(params) -> list[tuple[str, np.ndarray]]:
    if isinstance(params, LinearHeadParams):
        return [("weight", params.weight), ("bias", params.bias)]
    return [
        ("hidden_weight", params.hidden_weight),
        ("hidden_bias", params.hidden_bias),
        ("output_weight", params.output_weight),
        ("output_bias", params.output_bias),
    ]


def save_params(directory: str | Path, params: LinearHeadParams | DanParams) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = _params_arrays(params)
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays:
        blob = arr.astype("<f4").tobytes(order="C")
        entries.append({"name": name, "shape": list(arr.shape), "byte_offset": offset})
        blobs.append(blob)
        offset += len(blob)
    manifest: dict = {
        "format": "euphdet-params",
        "version": 1,
        "model": MODEL_LINEAR_HEAD if isinstance(params, LinearHeadParams) else MODEL_DAN,
        "arrays": entries,
    }
    if isinstance(params, DanParams):
        manifest["dropout"] = params.dropout
    with (directory / PARAMS_MANIFEST_NAME).open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with (directory / PARAMS_BIN_NAME).open("wb") as fh:
        for blob in blobs:
            fh.write(blob)


def load_params(directory: str | Path) -> LinearHeadParams | DanParams:
    directory = Path(directory)
    manifest_path = directory / PARAMS_MANIFEST_NAME
    if not manifest_path.exists():
        raise FormatError(f"{manifest_path}: missing manifest")
    with manifest_path.open(encoding="utf-8") as fh:
        manifest = json.load(fh)
    data = (directory / PARAMS_BIN_NAME).read_bytes()
    arrays = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        offset = entry["byte_offset"]
        if offset + count * 4 > len(data):
            raise FormatError(
                f"{directory / PARAMS_BIN_NAME}: truncated array {entry['name']!r}",
                byte_offset=len(data),
            )
        arrays[entry["name"]] = (
            np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
    if manifest["model"] == MODEL_LINEAR_HEAD:
        return LinearHeadParams(weight=arrays["weight"], bias=arrays["bias"])
    if manifest["model"] == MODEL_DAN:
        return DanParams(
            hidden_weight=arrays["hidden_weight"],
            hidden_bias=arrays["hidden_bias"],
            output_weight=arrays["output_weight"],
            output_bias=arrays["output_bias"],
            dropout=manifest["dropout"],
        )
    raise FormatError(f"{manifest_path}: unknown model {manifest['model']!r}")


def write_loss_trace(path: str | Path, trace: list[float]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(trace, start=1):
            writer.writerow([epoch, repr(loss)])

"""Euphemism-detection pipeline over precomputed sentence embeddings."""

from .corpus import (
    DatasetSplit,
    PetExample,
    PetStats,
    compute_pet_stats,
    parse_delimited_example,
    read_corpus_csv,
    render_delimited,
    split_dataset,
    split_sizes,
    write_corpus_csv,
)
from .embedding import (
    EmbeddingBundle,
    MockEncoder,
    MockEncoderConfig,
    SentenceEncoding,
    cosine_distance,
    encode_corpus,
    load_bundle,
    tokenize,
    tokenize_with_offsets,
    write_bundle,
)
from .cleaning import (
    CleanFlag,
    Correction,
    SenseEntry,
    add_substituted_entries,
    apply_corrections,
    bertscore_f1,
    flag_corpus,
    flag_mislabelled,
    read_sense_inventory_csv,
    select_cleanable_pets,
    substitute_sense,
    substituted_id,
)
from .augment import (
    AugmentThresholds,
    AugmentedExample,
    decide_label,
    find_occurrences,
    run_distance_augment,
    run_sense_augment,
)
from .classify import (
    DanClassifier,
    DanParams,
    LinearHeadClassifier,
    LinearHeadParams,
    TrainConfig,
    cross_entropy,
    dan_forward,
    dan_gradients,
    head_forward,
    head_gradients,
    load_params,
    pet_sum_embedding,
    save_params,
    softmax,
    train_classifier,
)
from .knn_ensemble import (
    KnnDatastore,
    MacroMetrics,
    Prediction,
    build_datastore,
    interpolate,
    knn_probability,
    macro_metrics,
    majority_vote,
)
from . import errors

__version__ = "0.1.0"

__all__ = [
    "AugmentThresholds",
    "AugmentedExample",
    "CleanFlag",
    "Correction",
    "DanClassifier",
    "DanParams",
    "DatasetSplit",
    "EmbeddingBundle",
    "KnnDatastore",
    "LinearHeadClassifier",
    "LinearHeadParams",
    "MacroMetrics",
    "MockEncoder",
    "MockEncoderConfig",
    "PetExample",
    "PetStats",
    "Prediction",
    "SenseEntry",
    "SentenceEncoding",
    "TrainConfig",
    "add_substituted_entries",
    "apply_corrections",
    "bertscore_f1",
    "build_datastore",
    "compute_pet_stats",
    "cosine_distance",
    "cross_entropy",
    "dan_forward",
    "dan_gradients",
    "decide_label",
    "encode_corpus",
    "errors",
    "find_occurrences",
    "flag_corpus",
    "flag_mislabelled",
    "head_forward",
    "head_gradients",
    "interpolate",
    "knn_probability",
    "load_bundle",
    "load_params",
    "macro_metrics",
    "majority_vote",
    "parse_delimited_example",
    "pet_sum_embedding",
    "read_corpus_csv",
    "read_sense_inventory_csv",
    "render_delimited",
    "run_distance_augment",
    "run_sense_augment",
    "save_params",
    "select_cleanable_pets",
    "softmax",
    "split_dataset",
    "split_sizes",
    "substitute_sense",
    "substituted_id",
    "tokenize",
    "tokenize_with_offsets",
    "train_classifier",
    "write_bundle",
    "write_corpus_csv",
]

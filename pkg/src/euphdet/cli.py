"""Command-line pipeline driver.

Every stage reads explicit input paths, resolves its settings from one
flat JSON config file plus command-line overrides, writes all outputs
into a staging directory, and promotes that directory atomically onto
--out.  A run_manifest.json with input content hashes, the resolved
config and the seed lands next to the outputs, so identical reruns are
byte-identical.

Exit codes: 0 success, 2 usage error, 3 data error, 4 missing input.
Failures print a single JSON line to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shutil
import sys
import tempfile
from pathlib import Path

from . import augment, classify, cleaning, corpus, embedding, knn_ensemble
from .errors import EuphdetError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MISSING = 4

RUN_MANIFEST_NAME = "run_manifest.json"

DEFAULTS: dict = {
    "seed": 0,
    "open_delim": "<",
    "close_delim": ">",
    "dimension": 64,
    "hash_seed": 0,
    "min_count": 10,
    "max_skew": 0.8,
    "median_scope": "pet",
    "delta": 1.0,
    "epsilon": 0.15,
    "n_max": 20,
    "literal_mode": True,
    "model": "linear-head",
    "lr": 0.01,
    "batch_size": 4,
    "epochs": 10,
    "hidden_size": 128,
    "dropout": 0.1,
    "k": 5,
    "lambda": 0.25,
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as one machine-parsable line."""

    def error(self, message):
        raise CliError(EXIT_USAGE, message)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING, f"config file not found: {p}")
    try:
        loaded = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_USAGE, f"config is not valid JSON: {exc}") from exc
    if not isinstance(loaded, dict):
        raise CliError(EXIT_USAGE, "config must be a flat JSON object")
    unknown = sorted(set(loaded) - set(DEFAULTS))
    if unknown:
        raise CliError(EXIT_USAGE, f"unknown config keys: {unknown}")
    return loaded


def _resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    cfg.update(_load_config(getattr(args, "config", None)))
    overrides = {
        "seed": getattr(args, "seed", None),
        "dimension": getattr(args, "dimension", None),
        "hash_seed": getattr(args, "hash_seed", None),
        "min_count": getattr(args, "min_count", None),
        "max_skew": getattr(args, "max_skew", None),
        "median_scope": getattr(args, "median_scope", None),
        "delta": getattr(args, "delta", None),
        "epsilon": getattr(args, "epsilon", None),
        "n_max": getattr(args, "n_max", None),
        "literal_mode": getattr(args, "literal_mode", None),
        "model": getattr(args, "model", None),
        "lr": getattr(args, "lr", None),
        "batch_size": getattr(args, "batch_size", None),
        "epochs": getattr(args, "epochs", None),
        "hidden_size": getattr(args, "hidden_size", None),
        "dropout": getattr(args, "dropout", None),
        "k": getattr(args, "k", None),
        "lambda": getattr(args, "lam", None),
    }
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    return cfg


def _delims(cfg) -> tuple[str, str]:
    return (cfg["open_delim"], cfg["close_delim"])


def _require_input(path: str | Path, kind: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING, f"{kind} not found: {p}")
    return p


def _hash_path(path: Path) -> str:
    if path.is_dir():
        digest = hashlib.sha256()
        for child in sorted(path.rglob("*")):
            if child.is_file():
                digest.update(child.relative_to(path).as_posix().encode("utf-8"))
                digest.update(child.read_bytes())
        return digest.hexdigest()
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _input_record(paths: dict[str, Path]) -> dict:
    return {
        name: {"path": str(p), "sha256": _hash_path(p)} for name, p in paths.items()
    }


def _write_run_manifest(staging: Path, stage: str, cfg: dict, inputs: dict,
                        extra: dict | None = None) -> None:
    outputs = [
        p.relative_to(staging).as_posix() for p in staging.rglob("*") if p.is_file()
    ]
    manifest = {
        "stage": stage,
        "seed": cfg["seed"],
        "config": cfg,
        "inputs": inputs,
        "outputs": sorted(outputs + [RUN_MANIFEST_NAME]),
    }
    if extra:
        manifest.update(extra)
    with (staging / RUN_MANIFEST_NAME).open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Stages.  Each takes (args, cfg, staging) and returns (inputs, extra).


def _cmd_split(args, cfg, staging: Path):
    corpus_path = _require_input(args.corpus, "corpus")
    examples = corpus.read_corpus_csv(corpus_path, _delims(cfg))
    split = corpus.split_dataset(examples, cfg["seed"])
    corpus.write_corpus_csv(staging / "train.csv", split.train, _delims(cfg))
    corpus.write_corpus_csv(staging / "validation.csv", split.validation, _delims(cfg))
    corpus.write_corpus_csv(staging / "test.csv", split.test, _delims(cfg))
    corpus.write_split_manifest(staging / "split_manifest.json", split)
    print(f"split {len(examples)} examples into {split.sizes()}")
    return _input_record({"corpus": corpus_path}), None


def _cmd_encode_mock(args, cfg, staging: Path):
    examples, inputs = _read_training_rows(args, cfg)
    seen: set[str] = set()
    for ex in examples:
        if ex.id in seen:
            raise EuphdetError(f"duplicate id {ex.id!r} across input corpora")
        seen.add(ex.id)
    config = embedding.MockEncoderConfig(
        dimension=cfg["dimension"], hash_seed=cfg["hash_seed"]
    )
    bundle = embedding.encode_corpus(examples, config)
    if args.inventory is not None:
        inventory_path = _require_input(args.inventory, "inventory")
        inventory = cleaning.read_sense_inventory_csv(inventory_path)
        covered = [ex for ex in examples if ex.pet in inventory]
        bundle = cleaning.add_substituted_entries(bundle, covered, inventory, config)
        inputs["inventory"] = inventory_path
    embedding.write_bundle(staging, bundle)
    print(f"encoded {len(bundle.entries)} sentences at dimension {config.dimension}")
    return _input_record(inputs), None


def _cmd_clean_flag(args, cfg, staging: Path):
    corpus_path = _require_input(args.corpus, "corpus")
    inventory_path = _require_input(args.inventory, "inventory")
    bundle_path = _require_input(args.bundle, "bundle")
    examples = corpus.read_corpus_csv(corpus_path, _delims(cfg))
    inventory = cleaning.read_sense_inventory_csv(inventory_path)
    bundle = embedding.load_bundle(bundle_path)
    stats = corpus.compute_pet_stats(examples)
    pets = cleaning.select_cleanable_pets(stats, cfg["min_count"], cfg["max_skew"])
    pets = [p for p in pets if p in inventory]
    flaggable = [ex for ex in examples if ex.pet in set(pets)]
    bundle = cleaning.add_substituted_entries(
        bundle,
        flaggable,
        inventory,
        embedding.MockEncoderConfig(bundle.dimension, cfg["hash_seed"]),
    )
    flags = cleaning.flag_corpus(
        examples, inventory, bundle, pets, median_scope=cfg["median_scope"]
    )
    cleaning.write_flags_csv(staging / "flags.csv", flags)
    print(
        f"flagged {len(flags)} of {len(flaggable)} rows "
        f"across {len(pets)} cleanable terms"
    )
    inputs = {"corpus": corpus_path, "inventory": inventory_path, "bundle": bundle_path}
    return _input_record(inputs), {"flag_count": len(flags)}


def _cmd_clean_apply(args, cfg, staging: Path):
    corpus_path = _require_input(args.corpus, "corpus")
    corrections_path = _require_input(args.corrections, "corrections")
    examples = corpus.read_corpus_csv(corpus_path, _delims(cfg))
    corrections = cleaning.read_corrections_csv(corrections_path)
    inputs = {"corpus": corpus_path, "corrections": corrections_path}
    if args.flags is not None:
        flags_path = _require_input(args.flags, "flags")
        flagged_ids = {flag.id for flag in cleaning.read_flags_csv(flags_path)}
        stray = sorted(c.id for c in corrections if c.id not in flagged_ids)
        if stray:
            raise EuphdetError(f"corrections for unflagged ids: {stray[:5]}")
        inputs["flags"] = flags_path
    cleaned, audit = cleaning.apply_corrections(examples, corrections)
    corpus.write_corpus_csv(staging / "cleaned.csv", cleaned, _delims(cfg))
    cleaning.write_audit_csv(staging / "audit.csv", audit)
    changed = sum(1 for entry in audit if entry.changed)
    print(f"applied {len(corrections)} corrections, {changed} labels changed")
    return _input_record(inputs), None


def _cmd_augment_r(args, cfg, staging: Path):
    corpus_path = _require_input(args.corpus, "corpus")
    external_path = _require_input(args.external, "external corpus")
    bundle_path = _require_input(args.bundle, "bundle")
    train = corpus.read_corpus_csv(corpus_path, _delims(cfg))
    sentences = augment.read_external_corpus(external_path)
    bundle = embedding.load_bundle(bundle_path)
    thresholds = augment.AugmentThresholds(
        delta=cfg["delta"], epsilon=cfg["epsilon"], n_max=cfg["n_max"],
        literal_mode=cfg["literal_mode"],
    )
    encoder = embedding.MockEncoder(
        embedding.MockEncoderConfig(bundle.dimension, cfg["hash_seed"])
    )
    rows = augment.run_distance_augment(train, sentences, bundle, thresholds, encoder)
    inputs = {"corpus": corpus_path, "external": external_path, "bundle": bundle_path}
    if args.split_manifest is not None:
        manifest_path = _require_input(args.split_manifest, "split manifest")
        manifest = corpus.read_split_manifest(manifest_path)
        reserved = set().union(*manifest["ids"].values())
        augment.check_no_id_collision(rows, reserved)
        inputs["split_manifest"] = manifest_path
    augment.write_augmented_csv(staging / "augmented.csv", rows, _delims(cfg))
    print(f"mined {len(rows)} labelled rows from {len(sentences)} sentences")
    return _input_record(inputs), {"row_count": len(rows)}


def _cmd_augment_s(args, cfg, staging: Path):
    inventory_path = _require_input(args.inventory, "inventory")
    external_path = _require_input(args.external, "external corpus")
    inventory = cleaning.read_sense_inventory_csv(inventory_path)
    sentences = augment.read_external_corpus(external_path)
    rows = augment.run_sense_augment(inventory, sentences, n_max=cfg["n_max"])
    inputs = {"inventory": inventory_path, "external": external_path}
    if args.split_manifest is not None:
        manifest_path = _require_input(args.split_manifest, "split manifest")
        manifest = corpus.read_split_manifest(manifest_path)
        reserved = set().union(*manifest["ids"].values())
        augment.check_no_id_collision(rows, reserved)
        inputs["split_manifest"] = manifest_path
    augment.write_augmented_csv(staging / "augmented.csv", rows, _delims(cfg))
    print(f"substituted {len(rows)} labelled rows from {len(sentences)} sentences")
    return _input_record(inputs), {"row_count": len(rows)}


def _read_training_rows(args, cfg):
    corpus_path = _require_input(args.corpus, "corpus")
    examples = list(corpus.read_corpus_csv(corpus_path, _delims(cfg)))
    inputs = {"corpus": corpus_path}
    for i, aug_path in enumerate(args.augmented or []):
        p = _require_input(aug_path, "augmented corpus")
        examples.extend(
            row.example for row in augment.read_augmented_csv(p, _delims(cfg))
        )
        inputs[f"augmented_{i}"] = p
    return examples, inputs


def _cmd_train(args, cfg, staging: Path):
    examples, inputs = _read_training_rows(args, cfg)
    bundle_path = _require_input(args.bundle, "bundle")
    bundle = embedding.load_bundle(bundle_path)
    inputs["bundle"] = bundle_path
    config = classify.TrainConfig(
        lr=cfg["lr"], batch_size=cfg["batch_size"], epochs=cfg["epochs"],
        seed=cfg["seed"],
    )
    if cfg["model"] not in (classify.MODEL_LINEAR_HEAD, classify.MODEL_DAN):
        raise CliError(EXIT_USAGE, f"model must be linear-head or dan, got {cfg['model']!r}")
    model = classify.train_classifier(
        cfg["model"], examples, bundle, config,
        hidden_size=cfg["hidden_size"], dropout=cfg["dropout"],
    )
    classify.save_params(staging, model.params_)
    classify.write_loss_trace(staging / "loss_trace.csv", model.loss_trace_)
    final = model.loss_trace_[-1] if model.loss_trace_ else float("nan")
    print(
        f"trained {cfg['model']} on {len(examples)} rows for "
        f"{cfg['epochs']} epochs (final mean loss {final:.6f})"
    )
    return _input_record(inputs), None


def _cmd_knn_build(args, cfg, staging: Path):
    corpus_path = _require_input(args.corpus, "corpus")
    bundle_path = _require_input(args.bundle, "bundle")
    examples = corpus.read_corpus_csv(corpus_path, _delims(cfg))
    bundle = embedding.load_bundle(bundle_path)
    store = knn_ensemble.build_datastore(examples, bundle)
    knn_ensemble.save_datastore(staging, store)
    print(f"stored {len(store)} sentence vectors")
    inputs = {"corpus": corpus_path, "bundle": bundle_path}
    return _input_record(inputs), None


def _predict_rows(examples, bundle, params, store, cfg, lam):
    kind = (
        classify.MODEL_LINEAR_HEAD
        if isinstance(params, classify.LinearHeadParams)
        else classify.MODEL_DAN
    )
    features = classify.resolve_features(kind, examples, bundle)
    rows = []
    for i, ex in enumerate(examples):
        if kind == classify.MODEL_LINEAR_HEAD:
            p_base = classify.head_forward(params, features[i])
        else:
            p_base = classify.dan_forward(params, features[i], train_mode=False)
        p_knn = None
        if store is not None:
            p_knn = knn_ensemble.knn_probability(
                store,
                bundle.require(ex.id).sentence_vector,
                k=cfg["k"],
                exclude_id=ex.id,
            )
        rows.append(knn_ensemble.make_prediction(ex.id, p_base, p_knn, lam))
    return rows


def _cmd_predict(args, cfg, staging: Path):
    corpus_path = _require_input(args.corpus, "corpus")
    bundle_path = _require_input(args.bundle, "bundle")
    params_path = _require_input(args.params, "params")
    examples = corpus.read_corpus_csv(corpus_path, _delims(cfg))
    bundle = embedding.load_bundle(bundle_path)
    params = classify.load_params(params_path)
    inputs = {"corpus": corpus_path, "bundle": bundle_path, "params": params_path}
    store = None
    if args.datastore is not None:
        store_path = _require_input(args.datastore, "datastore")
        store = knn_ensemble.load_datastore(store_path)
        inputs["datastore"] = store_path
    extra: dict = {}
    lam = cfg["lambda"]
    if args.tune_lambda:
        if store is None or args.gold is None:
            raise CliError(EXIT_USAGE, "--tune-lambda needs --datastore and --gold")
        gold_path = _require_input(args.gold, "gold corpus")
        gold = dict(knn_ensemble.read_label_csv(gold_path))
        inputs["gold"] = gold_path
        scores = {}
        for candidate in knn_ensemble.LAMBDA_GRID:
            rows = _predict_rows(examples, bundle, params, store, cfg, candidate)
            labels = [(gold[r.id], r.label) for r in rows]
            metrics = knn_ensemble.macro_metrics(
                [g for g, _ in labels], [p for _, p in labels]
            )
            scores[repr(candidate)] = metrics.macro_f1
        lam = min(
            knn_ensemble.LAMBDA_GRID, key=lambda c: (-scores[repr(c)], c)
        )
        extra = {"lambda_grid": scores, "lambda_selected": lam}
        print(f"selected lambda {lam} by validation macro F1")
    rows = _predict_rows(examples, bundle, params, store, cfg, lam)
    knn_ensemble.write_predictions_csv(staging / "predictions.csv", rows)
    print(f"scored {len(rows)} sentences")
    return _input_record(inputs), extra


def _cmd_eval(args, cfg, staging: Path):
    predictions_path = _require_input(args.predictions, "predictions")
    gold_path = _require_input(args.gold, "gold corpus")
    predictions = knn_ensemble.read_label_csv(predictions_path)
    gold = dict(knn_ensemble.read_label_csv(gold_path))
    missing = sorted(pid for pid, _ in predictions if pid not in gold)
    if missing:
        raise EuphdetError(f"predictions for ids absent from gold: {missing[:5]}")
    metrics = knn_ensemble.macro_metrics(
        [gold[pid] for pid, _ in predictions], [label for _, label in predictions]
    )
    knn_ensemble.write_metrics_json(staging / "metrics.json", metrics)
    print(f"macro F1 {metrics.macro_f1:.4f} over {len(predictions)} predictions")
    inputs = {"predictions": predictions_path, "gold": gold_path}
    return _input_record(inputs), None


def _cmd_ensemble(args, cfg, staging: Path):
    if len(args.members) % 2 == 0:
        raise EuphdetError(f"need an odd number of members, got {len(args.members)}")
    member_paths = [_require_input(p, "member predictions") for p in args.members]
    members = [knn_ensemble.read_label_csv(p) for p in member_paths]
    first_ids = [pid for pid, _ in members[0]]
    by_id = [dict(member) for member in members]
    for i, member in enumerate(by_id[1:], start=1):
        if set(member) != set(by_id[0]):
            raise EuphdetError(f"member {i} covers different ids than member 0")
    rows = [
        (pid, knn_ensemble.majority_vote([member[pid] for member in by_id]))
        for pid in first_ids
    ]
    knn_ensemble.write_label_csv(staging / "ensemble.csv", rows)
    print(f"voted over {len(by_id)} members for {len(rows)} sentences")
    inputs = {f"member_{i}": p for i, p in enumerate(member_paths)}
    return _input_record(inputs), None


# ---------------------------------------------------------------------------
# Wiring

STAGES = {
    "split": _cmd_split,
    "encode-mock": _cmd_encode_mock,
    "clean-flag": _cmd_clean_flag,
    "clean-apply": _cmd_clean_apply,
    "augment-r": _cmd_augment_r,
    "augment-s": _cmd_augment_s,
    "train": _cmd_train,
    "knn-build": _cmd_knn_build,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "ensemble": _cmd_ensemble,
}


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--force", action="store_true",
                        help="overwrite existing outputs")
    common.add_argument("--out", required=True, help="output directory")

    parser = _Parser(prog="euphdet", description=__doc__)
    sub = parser.add_subparsers(dest="stage", required=True)

    p = sub.add_parser("split", parents=[common])
    p.add_argument("--corpus", required=True)

    p = sub.add_parser("encode-mock", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--augmented", action="append",
                   help="augmented rows to encode as well (repeatable)")
    p.add_argument("--inventory", help="also encode euphemistic substitutions")
    p.add_argument("--dimension", type=int)
    p.add_argument("--hash-seed", type=int, dest="hash_seed")

    p = sub.add_parser("clean-flag", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--inventory", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--min-count", type=int, dest="min_count")
    p.add_argument("--max-skew", type=float, dest="max_skew")
    p.add_argument("--median-scope", choices=["pet", "global"], dest="median_scope")
    p.add_argument("--hash-seed", type=int, dest="hash_seed")

    p = sub.add_parser("clean-apply", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--corrections", required=True)
    p.add_argument("--flags", help="restrict corrections to flagged ids")

    p = sub.add_parser("augment-r", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--external", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--split-manifest", dest="split_manifest")
    p.add_argument("--delta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--n-max", type=int, dest="n_max")
    p.add_argument("--literal-mode", action=argparse.BooleanOptionalAction,
                   default=None, dest="literal_mode")
    p.add_argument("--hash-seed", type=int, dest="hash_seed")

    p = sub.add_parser("augment-s", parents=[common])
    p.add_argument("--inventory", required=True)
    p.add_argument("--external", required=True)
    p.add_argument("--split-manifest", dest="split_manifest")
    p.add_argument("--n-max", type=int, dest="n_max")

    p = sub.add_parser("train", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--augmented", action="append",
                   help="augmented rows to append (repeatable)")
    p.add_argument("--bundle", required=True)
    p.add_argument("--model", choices=[classify.MODEL_LINEAR_HEAD, classify.MODEL_DAN])
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden-size", type=int, dest="hidden_size")
    p.add_argument("--dropout", type=float)

    p = sub.add_parser("knn-build", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--bundle", required=True)

    p = sub.add_parser("predict", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--datastore")
    p.add_argument("--k", type=int)
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--tune-lambda", action="store_true", dest="tune_lambda",
                   help="pick lambda from a validation grid")
    p.add_argument("--gold", help="gold corpus for --tune-lambda")

    p = sub.add_parser("eval", parents=[common])
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True)

    p = sub.add_parser("ensemble", parents=[common])
    p.add_argument("members", nargs="+", help="odd list of prediction CSVs")

    return parser


def _run(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    if out.exists() and not args.force:
        raise CliError(EXIT_USAGE, f"output {out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}-staging-"))
    try:
        inputs, extra = STAGES[args.stage](args, cfg, staging)
        _write_run_manifest(staging, args.stage, cfg, inputs, extra)
        if out.exists():
            shutil.rmtree(out)
        staging.rename(out)
    finally:
        if staging.exists():
            shutil.rmtree(staging)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _run(args)
    except CliError as exc:
        print(json.dumps({"error": str(exc), "code": exc.code}), file=sys.stderr)
        return exc.code
    except EuphdetError as exc:
        print(json.dumps({"error": str(exc), "code": EXIT_DATA}), file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(json.dumps({"error": str(exc), "code": EXIT_MISSING}), file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())

"""Command line wrapper around export_embeddings."""

from __future__ import annotations

import argparse
import sys

from .errors import AdapterError
from .export import DEFAULT_MAX_LEN, ExportSpec, export_embeddings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="euphdet-export",
        description="Export frozen-transformer embeddings to a bundle directory.",
    )
    parser.add_argument("--model", required=True, help="model name or local path")
    parser.add_argument("--in", dest="corpus", required=True, metavar="CORPUS",
                        help="delimited corpus CSV")
    parser.add_argument("--out", dest="out_dir", required=True, metavar="BUNDLE_DIR",
                        help="bundle directory to write")
    parser.add_argument("--max-len", dest="max_len", type=int,
                        default=DEFAULT_MAX_LEN,
                        help="token cap per sentence, right truncation")
    parser.add_argument("--device", default="cpu", help="torch device hint")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = ExportSpec(
            model=args.model,
            corpus=args.corpus,
            out_dir=args.out_dir,
            max_len=args.max_len,
            device=args.device,
        )
        report = export_embeddings(spec)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except AdapterError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(
        f"exported {report.exported} sentences"
        f" ({len(report.truncated)} truncated, {len(report.rejects)} rejected)"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())

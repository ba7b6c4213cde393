"""Command-line entry: lasca-export export --model NAME --templates PATH --out PATH."""

from __future__ import annotations

import argparse
import sys

from .export import ModelUnavailableError, export
from .models import MODEL_TABLE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lasca-export",
        description="Encode a template dump with a pretrained sentence encoder.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="write an embedding store for a template dump")
    p.add_argument("--model", required=True, choices=sorted(MODEL_TABLE))
    p.add_argument("--templates", required=True, help="template dump (JSON Lines)")
    p.add_argument("--out", required=True, help="output embedding store path")
    p.add_argument("--batch", type=int, default=32)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = export(args.templates, args.model, args.out, batch=args.batch)
    except ModelUnavailableError as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 1
    print(
        f"exported {manifest.record_count} embeddings "
        f"({manifest.model}, dim {manifest.dim}) to {manifest.output_path}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""CLI: tdpe-export --model <id> --out <path> [--dedup] [--drop-special]."""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, ExportSpec, export


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="tdpe-export",
        description="Export a transformer's vocabulary and input-embedding matrix to a TDPE file.",
    )
    parser.add_argument("--model", required=True, help="model id or local model directory")
    parser.add_argument("--out", required=True, help="output TDPE path")
    parser.add_argument("--dedup", action="store_true", help="keep the first of duplicate token strings")
    parser.add_argument("--drop-special", action="store_true", help="drop the tokenizer's special tokens")
    parser.add_argument("--sidecar", default=None, help="sidecar JSON path (default: <out>.json)")
    args = parser.parse_args(argv)

    spec = ExportSpec(
        model_id=args.model,
        out_path=args.out,
        drop_special=args.drop_special,
        dedup=args.dedup,
        sidecar_path=args.sidecar,
    )
    try:
        sidecar = export(spec)
    except ExportError as exc:
        print(f"tdpe-export: {exc}", file=sys.stderr)
        return 1
    print(
        f"tdpe-export: wrote {sidecar['vocab_count']} tokens x {sidecar['dim']} dims "
        f"({sidecar['file_bytes']} bytes) to {args.out}",
        file=sys.stderr,
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())

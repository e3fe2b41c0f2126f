"""embed-export command line entry point."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .export import ExportError, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Embed a directory of images into a CIEM file plus an id manifest.",
    )
    parser.add_argument("--images", required=True, help="directory of input images")
    parser.add_argument("--out", required=True, help="output CIEM path")
    parser.add_argument("--model", default="pixel-stats",
                        help="embedding backend: pixel-stats or clip:<checkpoint> "
                             "(default: pixel-stats)")
    parser.add_argument("--batch-size", type=int, default=32,
                        help="images per inference batch (default: 32)")
    parser.add_argument("--manifest", default=None,
                        help="manifest CSV path (default: <out>.manifest.csv)")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    manifest = args.manifest or str(Path(args.out).with_suffix(".manifest.csv"))
    try:
        count = export(
            args.images,
            args.out,
            model_name=args.model,
            batch_size=args.batch_size,
            manifest_path=manifest,
        )
    except (ExportError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {count} records to {args.out} (manifest: {manifest})")
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

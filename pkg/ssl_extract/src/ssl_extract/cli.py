"""Command line entry point."""

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .errors import SslExtractError
from .extract import DumpConfig, dump_embeddings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssl-extract",
        description="dump frame-level speech-model embeddings as .ssl.cdfx files",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--model", required=True, help="model name or local path")
    parser.add_argument("--in", dest="in_dir", required=True, help="directory of WAV files")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--layer",
        type=int,
        default=-1,
        help="hidden-state index to dump (default: final layer)",
    )
    parser.add_argument(
        "--resample",
        action="store_true",
        help="resample inputs that are not at 16 kHz instead of refusing",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, os.environ.get("SSL_EXTRACT_LOG", "warning").upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    wavs = sorted(Path(args.in_dir).glob("*.wav"))
    if not wavs:
        print(f"ssl-extract: no .wav files in {args.in_dir}", file=sys.stderr)
        return 2
    cfg = DumpConfig(model=args.model, layer=args.layer, resample=args.resample)
    try:
        written = dump_embeddings(wavs, cfg, args.out)
    except SslExtractError as exc:
        print(f"ssl-extract: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(written)} files to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

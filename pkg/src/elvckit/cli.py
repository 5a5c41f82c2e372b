"""Command-line interface."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .config import load_config
from .errors import ElvcError
from .pipeline import (
    cmd_align,
    cmd_convert,
    cmd_evaluate,
    cmd_experiment,
    cmd_extract,
    cmd_synth,
    cmd_synth_corpus,
    cmd_train_elvc,
    cmd_train_nlvc,
    settings_with,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elvckit",
        description="Frame-based electrolaryngeal voice conversion toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="settings file (flat key = value lines)")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--jobs", type=int, default=1, help="parallel workers for per-utterance work")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract features for every manifest row")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="directory for feature files")
    p.add_argument(
        "--ssl-standin",
        action="store_true",
        help="also write deterministic stand-in embeddings (testing only)",
    )

    p = sub.add_parser("align", help="word-segmented DTW for parallel pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="directory for alignment paths")

    p = sub.add_parser("train-nlvc", help="stage 1: pretrain on normal speech")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")

    p = sub.add_parser("train-elvc", help="stage 2: fit the EL encoder")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--align", required=True, help="directory with alignment paths")
    p.add_argument("--init", required=True, help="stage-1 checkpoint")
    p.add_argument("--out", required=True, help="checkpoint output path")

    p = sub.add_parser("convert", help="convert feature files to a target speaker")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--target", required=True, help="target speaker id")
    p.add_argument("--out", required=True, help="directory for converted features")
    p.add_argument("--output-domain", help="decode into this domain (default: input domain)")
    p.add_argument("inputs", nargs="+", help="feature files to convert")

    p = sub.add_parser("synth", help="synthesize audio from mel or envelope files")
    p.add_argument("--out", required=True, help="directory for wav files")
    p.add_argument("inputs", nargs="+", help="feature files to synthesize")

    p = sub.add_parser("evaluate", help="score converted audio against references")
    p.add_argument("--manifest", required=True)
    p.add_argument("--converted", required=True, help="directory with converted wavs")
    p.add_argument("--out", required=True, help="report path")

    p = sub.add_parser("experiment", help="full pipeline comparison on one corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="directory for all artifacts")

    p = sub.add_parser("synth-corpus", help="generate the synthetic test corpus")
    p.add_argument("--out", required=True, help="corpus root directory")
    p.add_argument("--utterances", type=int, default=20)
    p.add_argument("--seconds", type=float, default=3.0)
    p.add_argument("--words", type=int, default=4)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("ELVCKIT_LOG", "WARNING").upper(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.config:
        overrides.update(load_config(args.config))
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = settings_with(overrides)
    try:
        if args.command == "extract":
            if args.ssl_standin:
                cfg["ssl_standin"] = True
            written = cmd_extract(args.manifest, args.out, cfg, args.jobs)
            print(f"extracted {len(written)} feature files to {args.out}")
        elif args.command == "align":
            written = cmd_align(args.manifest, args.features, args.out, cfg, args.jobs)
            print(f"aligned {len(written)} utterance pairs")
        elif args.command == "train-nlvc":
            _, rows = cmd_train_nlvc(args.manifest, args.features, args.out, cfg)
            final = [v for e, k, v in rows if k == "total"][-1]
            print(f"stage 1 done, final loss {final:.6f}, checkpoint at {args.out}")
        elif args.command == "train-elvc":
            _, rows = cmd_train_elvc(
                args.manifest, args.features, args.align, args.init, args.out, cfg
            )
            final = [v for e, k, v in rows if k == "total"][-1]
            print(f"stage 2 done, final loss {final:.6f}, checkpoint at {args.out}")
        elif args.command == "convert":
            written = cmd_convert(
                args.inputs,
                args.ckpt,
                args.target,
                args.out,
                cfg,
                args.jobs,
                output_domain=args.output_domain,
            )
            print(f"converted {len(written)} utterances to {args.out}")
        elif args.command == "synth":
            written = cmd_synth(args.inputs, args.out, cfg, args.jobs)
            print(f"synthesized {len(written)} wav files to {args.out}")
        elif args.command == "evaluate":
            results = cmd_evaluate(args.manifest, args.converted, args.out, cfg, args.jobs)
            print(f"evaluated {len(results)} utterances, report at {args.out}")
        elif args.command == "experiment":
            summary, failures = cmd_experiment(args.manifest, args.out, cfg, args.jobs)
            for name, mean_mcd, error in summary:
                shown = "ERROR" if error else f"{mean_mcd:.4f} dB"
                print(f"{name}: {shown}")
            if failures:
                print(f"failed systems: {', '.join(failures)}", file=sys.stderr)
                return 1
        elif args.command == "synth-corpus":
            corpus = cmd_synth_corpus(
                args.out,
                cfg,
                n_utterances=args.utterances,
                seconds=args.seconds,
                n_words=args.words,
            )
            print(f"wrote {len(corpus.records)} utterances under {corpus.root}")
    except ElvcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""
Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from pydantic import ValidationError

from .data import DataError
from .ensemble import EnsembleError
from .pipeline import (
    ConfigError,
    PipelineConfig,
    StageError,
    cmd_build,
    cmd_evaluate,
    cmd_generate_synthetic,
    cmd_recommend,
    cmd_run,
    cmd_split,
    cmd_tune,
    load_config,
)
from .synthetic import PatternMix

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _mix(text: str) -> PatternMix:
    try:
        pairs = dict(part.split("=", 1) for part in _str_list(text))
        return PatternMix(**{k.strip(): float(v) for k, v in pairs.items()})
    except (ValueError, ValidationError) as exc:
        raise argparse.ArgumentTypeError(f"bad pattern mix {text!r}: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="pipeline configuration (JSON)")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--threads", type=int, help="worker threads (default: available CPUs)")
    common.add_argument("--category", type=_int_list, help="comma-separated challenge categories")
    common.add_argument("--models", type=_str_list, help="comma-separated model names from the config")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = _Parser(prog="playlistrec", description="Hybrid playlist-continuation recommender.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", parents=[common], help="write a synthetic corpus")
    gen.add_argument("--playlists", type=int, default=2000)
    gen.add_argument("--tracks", type=int, default=5000)
    gen.add_argument("--mix", type=_mix, help="pattern weights, e.g. album=0.5,artist=0.1")

    sub.add_parser("split", parents=[common], help="draw challenge playlists from a corpus")
    sub.add_parser("build", parents=[common], help="compute and cache model scores")
    sub.add_parser("tune", parents=[common], help="search ensemble weights on a validation split")
    sub.add_parser("recommend", parents=[common], help="write a submission file")
    ev = sub.add_parser("evaluate", parents=[common], help="score a submission")
    ev.add_argument("--submission", type=Path, help="submission CSV (default: OUT/submission.csv)")
    sub.add_parser("run", parents=[common], help="split, build, blend, boost, rank and evaluate")
    return parser


def _config(args) -> PipelineConfig:
    overrides = {
        "seed": args.seed,
        "threads": args.threads,
        "categories": args.category,
        "out_dir": str(args.out.resolve()) if args.out is not None else None,
    }
    if args.config is not None and not args.config.is_file():
        raise UsageError(f"config file {args.config} not found")
    try:
        cfg = load_config(args.config, **overrides)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from exc
    if cfg.threads is None:
        cfg = cfg.model_copy(update={"threads": os.cpu_count()})
    if args.models:
        unknown = sorted(set(args.models) - set(cfg.models))
        if unknown:
            raise UsageError(f"unknown models {unknown}; configured: {sorted(cfg.models)}")
        cfg = cfg.model_copy(update={"models": {m: cfg.models[m] for m in args.models}})
    return cfg


def _dispatch(args) -> None:
    if args.command == "generate":
        out = args.out or Path(".")
        paths = cmd_generate_synthetic(
            args.seed if args.seed is not None else 0,
            out,
            n_playlists=args.playlists,
            n_tracks=args.tracks,
            mix=args.mix,
        )
        print("\n".join(str(p) for p in paths))
        return
    cfg = _config(args)
    if args.command == "split":
        print("\n".join(str(p) for p in cmd_split(cfg)))
    elif args.command == "build":
        for name, path in sorted(cmd_build(cfg).items()):
            print(f"{name}\t{path}")
    elif args.command == "tune":
        print(cmd_tune(cfg))
    elif args.command == "recommend":
        print(cmd_recommend(cfg))
    elif args.command == "evaluate":
        print(cmd_evaluate(cfg, args.submission).to_json())
    elif args.command == "run":
        result = cmd_run(cfg)
        print(result.submission_path)
        if result.report is not None:
            print(json.dumps(result.report.overall.__dict__))


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (UsageError, ConfigError, ValidationError)):
        return EXIT_USAGE
    if isinstance(exc, (DataError, EnsembleError, OSError, json.JSONDecodeError)):
        return EXIT_DATA
    return EXIT_INTERNAL


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _dispatch(args)
    except Exception as exc:
        code = _exit_code(exc)
        print(f"playlistrec: error: {exc}", file=sys.stderr)
        if code == EXIT_INTERNAL:
            logging.getLogger(__name__).debug("internal error", exc_info=True)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

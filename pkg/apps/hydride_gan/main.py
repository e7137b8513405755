"""Command-line entry point for the hydride GAN pipeline."""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

# Add project root to path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

import structlog

from apps.hydride_gan.config import config, validate_config
from apps.hydride_gan.services.geometry import GeoMode
from apps.hydride_gan.services.pipeline import (
    Method,
    PipelineRun,
    RunConfig,
    report,
    run_pipeline,
)
from apps.hydride_gan.services.synthetic_corpus import PROTOTYPES, make_synthetic_corpus
from apps.hydride_gan.utils.error_handler import ErrorHandler, HydrideGanError
from apps.hydride_gan.utils.logger_utils import configure_logging

logger = structlog.get_logger()

STAGE_COMMANDS = ("encode", "train-step1", "transfer", "train-step2", "generate", "validate", "pdf")


def _add_run_options(parser: argparse.ArgumentParser, multiple_seeds: bool) -> None:
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--method", choices=[m.value for m in Method])
    if multiple_seeds:
        parser.add_argument("--seed", type=int, action="append", dest="seeds",
                            help="seed (repeat for several runs)")
    else:
        parser.add_argument("--seed", type=int, help="seed of the run directory")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--epochs", type=int, help="override the epoch count")
    parser.add_argument("--geo-mode", choices=[m.value for m in GeoMode])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hydride_gan",
        description="Two-step cross-domain GAN for ternary hydride crystal generation",
    )
    parser.add_argument("--log-level", default=config.LOG_LEVEL)
    parser.add_argument("--log-format", default=config.LOG_FORMAT, choices=["json", "console"])
    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("make-corpus", help="write a seeded synthetic binary-hydride corpus")
    corpus.add_argument("--prototype", choices=sorted(PROTOTYPES), default="rocksalt")
    corpus.add_argument("--metal", required=True)
    corpus.add_argument("--lattice", type=float, nargs=2, metavar=("LOW", "HIGH"),
                        default=(3.8, 4.2))
    corpus.add_argument("--count", type=int, default=35)
    corpus.add_argument("--seed", type=int, default=0)
    corpus.add_argument("--jitter", type=float, default=0.02)
    corpus.add_argument("--out", required=True)

    for name in STAGE_COMMANDS:
        _add_run_options(sub.add_parser(name, help=f"run the {name} stage"), multiple_seeds=False)
    _add_run_options(sub.add_parser("run", help="run the full pipeline"), multiple_seeds=True)

    comparison = sub.add_parser("report", help="method comparison table from run directories")
    comparison.add_argument("dirs", nargs="+")
    comparison.add_argument("--out", help="write the machine-readable summary here")
    return parser


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    seeds = getattr(args, "seeds", None)
    if seeds is None and getattr(args, "seed", None) is not None:
        seeds = [args.seed]
    cfg = RunConfig.from_file(args.config).with_overrides(
        method=args.method,
        seeds=seeds,
        output_dir=args.out,
        epochs=args.epochs,
        geo_mode=args.geo_mode,
    )
    cfg.check_paths()
    return cfg


def _run_stage(command: str, run: PipelineRun) -> None:
    if command == "encode":
        run.encode()
    elif command == "train-step1":
        run.train_step1()
    elif command == "transfer":
        run.transfer()
    elif command == "train-step2":
        run.train_step2()
    elif command == "generate":
        if run.cfg.method in (Method.TWO_STEP, Method.TWO_STEP_UNCONSTRAINED):
            samples = run.generate()
        else:
            samples = run.baseline()
        run.decode_candidates(samples)
    elif command == "validate":
        print(run.validate().to_text(), end="")
    elif command == "pdf":
        print(run.pdf())


def dispatch(args: argparse.Namespace) -> None:
    if args.command == "make-corpus":
        print(make_synthetic_corpus(args.prototype, args.metal, tuple(args.lattice), args.count,
                                    args.seed, args.out, jitter=args.jitter))
    elif args.command == "report":
        comparison = report(args.dirs)
        print(comparison.to_text(), end="")
        if args.out:
            Path(args.out).write_text(
                json.dumps(comparison.to_summary(), indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )
    elif args.command == "run":
        for directory in run_pipeline(_load_run_config(args)):
            print(directory)
    else:
        cfg = _load_run_config(args)
        _run_stage(args.command, PipelineRun(cfg, cfg.seeds[0]))


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments and run a command.

    Returns:
        0 on success, 1 for configuration errors, 2 for stage failures
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.log_format)
    try:
        validate_config()
    except ValueError as e:
        logger.error("config_validation_failed", error=str(e))
        print(f"[config] {e}", file=sys.stderr)
        return ErrorHandler.EXIT_CONFIG

    try:
        dispatch(args)
    except HydrideGanError as e:
        logger.error(
            "command_failed",
            command=args.command,
            error_type=ErrorHandler.classify(e),
            error=str(e)[:500],
        )
        print(ErrorHandler.describe(e), file=sys.stderr)
        return ErrorHandler.exit_code_for(e)
    logger.info("command_completed", command=args.command)
    return ErrorHandler.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""
Debiased Ranking - Command-line interface.

Ties the pipeline together: ingest rating logs, train and evaluate ranking
models, analyze exposure, mix in missing-at-random data, sweep hyperparameters,
simulate feedback loops and export embeddings.
"""

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

from dotenv import load_dotenv

from .commands import pipeline
from .config import SNAPSHOT_NAME, RunConfig, write_args
from .data.download import DEFAULT_DOWNLOAD_TIMEOUT
from .data.ratings import RATING_FORMATS

# Load environment variables
load_dotenv()

DEFAULT_LOG_LEVEL = "INFO"
DEFAULT_LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Configure logging
logging.basicConfig(
    level=getattr(
        logging, os.getenv("RANKING_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper(), logging.INFO
    ),
    format=DEFAULT_LOG_FORMAT,
)
logger = logging.getLogger(__name__)


class RankingToolkit:
    """Resolved run configuration plus run-directory and log-file management."""

    def __init__(self, config: Optional[RunConfig] = None, run_id: Optional[str] = None):
        self.config = config or RunConfig()
        self.run_id = run_id
        self.download_timeout = float(
            os.getenv("RANKING_DOWNLOAD_TIMEOUT", DEFAULT_DOWNLOAD_TIMEOUT)
        )

    def _new_run_id(self, command: str) -> str:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
        return f"{command}-{stamp}-{self.config.seed}"

    def snapshot(self, directory: Path, command: str, **arguments: Any) -> Path:
        """Write config.env and args.env into `directory`."""
        directory = Path(directory)
        self.config.write_snapshot(directory)
        write_args(directory, command, arguments)
        return directory

    @contextmanager
    def run(self, command: str, **arguments: Any) -> Iterator[Path]:
        """
        Create `<out>/<run-id>/` holding config.env, args.env and logs/run.log.

        The log file handler is detached again when the block exits.
        """
        run_dir = self.config.output_root / (self.run_id or self._new_run_id(command))
        (run_dir / "logs").mkdir(parents=True, exist_ok=True)
        self.snapshot(run_dir, command, **arguments)

        handler = logging.FileHandler(run_dir / "logs" / "run.log")
        handler.setFormatter(logging.Formatter(DEFAULT_LOG_FORMAT))
        root = logging.getLogger()
        root.addHandler(handler)
        logger.info(f"Run {command} writing to {run_dir}")
        try:
            yield run_dir
        finally:
            root.removeHandler(handler)
            handler.close()


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One flag per RunConfig key; values stay strings and are coerced by RunConfig."""
    group = parser.add_argument_group("run configuration")
    group.add_argument("--config", help=f"key=value config file (e.g. a {SNAPSHOT_NAME} snapshot)")
    group.add_argument(
        "--run-id", help="Run directory name (default: <command>-<UTC time>-<seed>)"
    )
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type is bool:
            group.add_argument(
                flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None
            )
        else:
            group.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _str_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="debiased-ranking",
        description="Debiased Ranking - DPR training, evaluation and feedback-loop simulation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  debiased-ranking ingest --input ratings.tsv --dataset-dir data/ml --threshold 4
  debiased-ranking train --dataset-dir data/ml --loss dpr --alpha 2
  debiased-ranking sweep --dataset-dir data/ml --alpha-grid 0,1,2,3
  debiased-ranking simulate --losses bpr,dpr --seeds 0,1,2
        """,
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="Parse a rating log into a leave-one-out split")
    p.add_argument("--input", required=True, help="Rating file")
    p.add_argument("--format", dest="fmt", choices=RATING_FORMATS, default="tsv")
    p.add_argument("--threshold", type=float, default=1.0, help="Positive if rating >= threshold")
    p.add_argument("--columns", default="0,1,2", help="user,item,value column indices")
    p.add_argument("--skip-header", action="store_true")

    p = sub.add_parser("make-synthetic", help="Write an exposure-biased synthetic split")
    p.add_argument("--num-users", type=int, default=200)
    p.add_argument("--num-items", type=int, default=500)
    p.add_argument("--zipf-exponent", type=float, default=1.0)
    p.add_argument("--density", type=float, default=0.05)

    p = sub.add_parser("fetch-coat", help="Download the Coat rating matrices")
    p.add_argument("--dest", required=True)
    p.add_argument("--url", default=None)
    p.add_argument("--force", action="store_true")

    sub.add_parser("train", help="Train with early stopping and report on test")

    p = sub.add_parser("evaluate", help="Evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("simulate", help="Feedback-loop simulation")
    p.add_argument("--losses", type=_str_list, default=None, help="Comma list (default: --loss)")
    p.add_argument("--seeds", type=_int_list, default=None, help="Comma list (default: --seed)")

    p = sub.add_parser("analyze-exposure", help="Popularity and exposure shares")
    p.add_argument("--groups", type=int, default=10)
    p.add_argument("--steps", type=int, default=0, help="Iterate the exposure update")

    p = sub.add_parser("mix", help="Mix MAR positives into the training set")
    p.add_argument("--mar", required=True, help="MAR rating file")
    p.add_argument("--mar-format", choices=RATING_FORMATS, default="ascii_matrix")
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--pct", type=float, required=True)
    p.add_argument("--output", required=True, help="Directory for the mixed split")

    p = sub.add_parser("sweep", help="Grid sweep over alpha and/or beta")
    p.add_argument("--alpha-grid", default=None)
    p.add_argument("--beta-grid", default=None)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("export-embeddings", help="Write embeddings to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", default=None)

    for choice in sub.choices.values():
        _add_config_flags(choice)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then --config file, then explicit flags."""
    cfg = RunConfig()
    if args.config:
        cfg = RunConfig.from_file(args.config, cfg)
    return cfg.with_overrides({name: getattr(args, name) for name in RunConfig.keys()})


def dispatch(toolkit: RankingToolkit, args: argparse.Namespace) -> Dict[str, Any]:
    cfg = toolkit.config
    command = args.command
    if command == "ingest":
        columns = tuple(int(c) for c in args.columns.split(","))
        if len(columns) != 3:
            raise ValueError("--columns needs exactly three indices")
        return pipeline.ingest(
            toolkit, args.input, args.fmt, args.threshold, columns, args.skip_header
        )
    if command == "make-synthetic":
        return pipeline.make_synthetic_dataset(
            toolkit, args.num_users, args.num_items, args.zipf_exponent, args.density
        )
    if command == "fetch-coat":
        return pipeline.fetch_coat(toolkit, args.dest, args.url, args.force)
    if command == "train":
        return pipeline.train(toolkit)
    if command == "evaluate":
        return pipeline.evaluate_checkpoint(toolkit, args.checkpoint)
    if command == "simulate":
        return pipeline.simulate(toolkit, args.losses or [cfg.loss], args.seeds or [cfg.seed])
    if command == "analyze-exposure":
        return pipeline.analyze_exposure(toolkit, args.groups, args.steps)
    if command == "mix":
        return pipeline.mix(
            toolkit, args.mar, args.output, args.pct, args.mar_format, args.threshold
        )
    if command == "sweep":
        return pipeline.sweep(toolkit, args.alpha_grid, args.beta_grid, args.workers)
    if command == "export-embeddings":
        return pipeline.export(toolkit, args.checkpoint, args.output)
    raise ValueError(f"Unknown command {command}")


def main(argv: Optional[Sequence[str]] = None) -> None:
    """Run one CLI command."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        toolkit = RankingToolkit(resolve_config(args), run_id=args.run_id)
        result = dispatch(toolkit, args)
    except KeyboardInterrupt:
        logger.info("Interrupted")
        sys.exit(130)
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        sys.exit(1)

    print(json.dumps(result, indent=2, default=str))


if __name__ == "__main__":
    main()

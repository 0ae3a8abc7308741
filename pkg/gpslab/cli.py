"""
Command-line entry point for gpslab

    python -m gpslab <command> --config run.toml --out results/ [--seed N] [--threads N]

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure, 1 anything else.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from gpslab.core.config import settings
from gpslab.core.exceptions import GPSLabError
from gpslab.core.logging import get_logger, get_run_logger, log_error, setup_logging
from gpslab.schemas.run_config import load_run_config
from gpslab.utils.io import write_yaml
from gpslab.workers.commands import COMMANDS, RunContext, manifest

logger = get_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpslab", description="Gaussian Process States toolkit")
    parser.add_argument("command", choices=sorted(COMMANDS), help="what to run")
    parser.add_argument("--config", required=True, type=Path, help="TOML run configuration")
    parser.add_argument("--out", required=True, type=Path, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides the configuration)")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (recorded in the manifest)")
    parser.add_argument("--log-level", default=None, help="override LOG_LEVEL")
    parser.add_argument("--log-json", action="store_true", help="JSON console logs")
    return parser


def run(command: str, config_path: Path, out: Path, seed: Optional[int] = None, threads: Optional[int] = None) -> int:
    """Run one command and return its exit code."""
    run_logger = get_run_logger(logger, command=command, seed=seed)
    try:
        config = load_run_config(config_path)
        updates = {}
        if seed is not None:
            updates["seed"] = seed
        if threads is not None:
            updates["threads"] = threads
        if updates:
            config = config.model_copy(update=updates)
        resolved_seed = config.seed if config.seed is not None else settings.DEFAULT_SEED
        config = config.model_copy(update={"seed": resolved_seed})
        run_logger = get_run_logger(logger, command=command, seed=resolved_seed)

        out.mkdir(parents=True, exist_ok=True)
        ctx = RunContext(command, config, out, resolved_seed)
        write_yaml(out / "manifest.yaml", manifest(ctx))
        run_logger.info(f"Running '{command}' with {config_path}, output in {out}")

        summary = COMMANDS[command](ctx)
        write_yaml(out / "summary.yaml", {"command": command, "seed": resolved_seed, **summary})
        run_logger.info(f"'{command}' finished: {summary}")
        return 0
    except GPSLabError as exc:
        log_error(run_logger.logger, exc, {"command": command})
        if out.is_dir():
            write_yaml(out / "summary.yaml", {"command": command, **exc.to_dict()})
        return exc.exit_code
    except Exception as exc:
        log_error(run_logger.logger, exc, {"command": command})
        return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(log_level=args.log_level, json_format=args.log_json)
    return run(args.command, args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())

"""
conelab - numerical laboratory for the twisted conical Kähler-Ricci flow
on rotationally symmetric model surfaces.

Command-line entry point and global error handler.
"""

import argparse
import logging
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional

from pydantic import BaseModel, Field, ValidationError

from conelab import __version__
from conelab.commands import reports, runs, sweeps
from conelab.config import load_config, settings
from conelab.errors import ConfigError, LabError
from conelab.logging_config import setup_logging
from conelab.middleware.logging_middleware import CommandLoggingMiddleware
from conelab.utils.artifacts import write_json

logger = logging.getLogger(__name__)

ERROR_FILE = "error.json"


class Command(str, Enum):
    RUN = "run"
    SWEEP_GAMMA = "sweep-gamma"
    SWEEP_EPS = "sweep-eps"
    SWEEP_TIME = "sweep-time"
    SWEEP_DOMAIN = "sweep-domain"
    VALIDATE = "validate"
    MMS = "mms"
    COMPARE = "compare"
    REPORT = "report"


class RunManifest(BaseModel):
    """One command invocation"""

    command: Command
    config_path: Optional[Path] = None
    out_dir: Path = Field(default_factory=lambda: Path(settings.out_dir))
    seed: Optional[int] = Field(default=None, ge=0)
    jobs: int = Field(default=1, ge=1)


HANDLERS: Dict[Command, Callable[..., int]] = {
    Command.RUN: runs.run_command,
    Command.VALIDATE: runs.validate_command,
    Command.MMS: runs.mms_command,
    Command.COMPARE: runs.compare_command,
    Command.SWEEP_GAMMA: sweeps.sweep_gamma_command,
    Command.SWEEP_EPS: sweeps.sweep_eps_command,
    Command.SWEEP_TIME: sweeps.sweep_time_command,
    Command.SWEEP_DOMAIN: sweeps.sweep_domain_command,
    Command.REPORT: reports.report_command,
}


def _write_error(out_dir: Path, payload: dict) -> None:
    try:
        write_json(Path(out_dir) / ERROR_FILE, payload)
    except OSError as e:
        logger.error(f"Could not write {ERROR_FILE}: {e}")


def execute(manifest: RunManifest) -> int:
    """
    Run one command. Failures become an error.json under out_dir.

    Returns:
        0 on success, 2 for configuration errors, 1 for any other failure
    """
    try:
        Path(manifest.out_dir).mkdir(parents=True, exist_ok=True)
        config = None
        if manifest.command is not Command.REPORT or manifest.config_path is not None:
            config = load_config(manifest.config_path)
            if manifest.seed is None:
                manifest = manifest.model_copy(update={"seed": config.sweep.seed})
        if manifest.seed is None:
            manifest = manifest.model_copy(update={"seed": 0})
        handler = CommandLoggingMiddleware(HANDLERS[manifest.command])
        return handler(manifest, config)
    except ConfigError as e:
        logger.error(f"Configuration error: {e.message}", exc_info=True, extra={"key": e.key, "line": e.line})
        _write_error(manifest.out_dir, e.to_dict())
        return 2
    except LabError as e:
        logger.error(f"Command failed: {e.message}", exc_info=True, extra={"code": e.code})
        _write_error(manifest.out_dir, e.to_dict())
        return 1
    except Exception as e:
        logger.error(f"Unhandled exception: {e}", exc_info=True)
        _write_error(
            manifest.out_dir,
            {"error": type(e).__name__, "code": "internal_error", "message": str(e), "details": {}},
        )
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conelab", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in Command:
        handler = HANDLERS[command]
        sub = subparsers.add_parser(command.value, help=(handler.__doc__ or "").strip().splitlines()[0])
        sub.add_argument("--config", type=Path, default=None, help="run configuration file")
        sub.add_argument("--out", type=Path, default=Path(settings.out_dir), help="output root")
        sub.add_argument("--seed", type=int, default=None, help="seed (default: sweep.seed)")
        sub.add_argument("--jobs", type=int, default=settings.jobs, help="parallel runs")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(settings.log_level, settings.log_format)
    try:
        manifest = RunManifest(
            command=Command(args.command),
            config_path=args.config,
            out_dir=args.out,
            seed=args.seed,
            jobs=args.jobs,
        )
    except ValidationError as e:
        parser.error(str(e.errors()[0]["msg"]))
    return execute(manifest)

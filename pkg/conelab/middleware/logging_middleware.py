"""
Logging Middleware
Logs every command invocation and its outcome
"""

import logging
import time
from typing import Callable

logger = logging.getLogger(__name__)


class CommandLoggingMiddleware:
    """
    Wraps a command handler and logs start and completion.
    """

    def __init__(self, handler: Callable[..., int]):
        self.handler = handler

    def __call__(self, manifest, *args, **kwargs) -> int:
        """Run the command and log details"""

        start_time = time.time()

        # Log incoming command
        logger.info(
            f"Incoming command: {manifest.command.value}",
            extra={
                "command": manifest.command.value,
                "config": str(manifest.config_path) if manifest.config_path else None,
                "out_dir": str(manifest.out_dir),
                "seed": manifest.seed,
            },
        )

        status = 1
        try:
            status = self.handler(manifest, *args, **kwargs)
            return status
        finally:
            duration = time.time() - start_time

            # Log outcome
            logger.info(
                f"Command completed: {manifest.command.value} - {status}",
                extra={
                    "command": manifest.command.value,
                    "status": status,
                    "duration_ms": round(duration * 1000, 2),
                },
            )

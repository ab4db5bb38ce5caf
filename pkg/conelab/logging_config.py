"""
Logging setup for command-line runs.
"""

import logging
import sys

from pythonjsonlogger import jsonlogger

TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
JSON_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


def setup_logging(level: str = "INFO", log_format: str = "json") -> logging.Logger:
    """Configure the root logger; calling it again replaces the handler"""
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_conelab", False):
            root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler._conelab = True
    if log_format == "json":
        handler.setFormatter(
            jsonlogger.JsonFormatter(JSON_FORMAT, rename_fields={"levelname": "level", "asctime": "timestamp"})
        )
    else:
        handler.setFormatter(logging.Formatter(TEXT_FORMAT))
    root.addHandler(handler)
    root.setLevel(getattr(logging, level.upper(), logging.INFO))
    return root

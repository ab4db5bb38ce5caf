"""
Metrics Utility Module
Solver counters on a private Prometheus registry, dumped to a textfile per command
"""

import logging
import time
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Optional

from prometheus_client import (
    CollectorRegistry,
    Counter,
    Gauge,
    Histogram,
    write_to_textfile,
)

logger = logging.getLogger(__name__)

REGISTRY = CollectorRegistry()

NEWTON_ITERATIONS_TOTAL = Counter(
    "conelab_newton_iterations_total",
    "Total Newton iterations",
    ["solver"],  # 'step' or 'elliptic'
    registry=REGISTRY,
)
STEPS_TOTAL = Counter(
    "conelab_steps_total",
    "Total time steps attempted",
    ["variant", "status"],  # status: 'accepted' or 'rejected'
    registry=REGISTRY,
)
DT_HALVINGS_TOTAL = Counter(
    "conelab_dt_halvings_total",
    "Total step size halvings",
    registry=REGISTRY,
)
RUN_ABORTS_TOTAL = Counter(
    "conelab_run_aborts_total",
    "Total aborted runs",
    ["variant"],
    registry=REGISTRY,
)
STEP_DURATION = Histogram(
    "conelab_step_duration_seconds",
    "Wall time of one implicit step",
    ["variant"],
    buckets=(0.0005, 0.001, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, float("inf")),
    registry=REGISTRY,
)
RUNS_IN_PROGRESS = Gauge(
    "conelab_runs_in_progress",
    "Number of flow runs in progress",
    registry=REGISTRY,
)
STEP_CONTROLLER_STATE = Gauge(
    "conelab_step_controller_state",
    "Step controller state (0=nominal, 1=reduced, 2=aborted)",
    ["variant"],
    registry=REGISTRY,
)


class MetricsHelper:
    """Helper class for recording metrics"""

    @staticmethod
    def record_newton(solver: str, iterations: int):
        NEWTON_ITERATIONS_TOTAL.labels(solver=solver).inc(iterations)

    @staticmethod
    def record_step(variant: str, accepted: bool):
        STEPS_TOTAL.labels(
            variant=variant, status="accepted" if accepted else "rejected"
        ).inc()

    @staticmethod
    def record_dt_halving():
        DT_HALVINGS_TOTAL.inc()

    @staticmethod
    def record_abort(variant: str):
        RUN_ABORTS_TOTAL.labels(variant=variant).inc()

    @staticmethod
    def record_step_controller_state(variant: str, state: str):
        """Record step controller state change"""
        state_map = {"nominal": 0, "reduced": 1, "aborted": 2}
        STEP_CONTROLLER_STATE.labels(variant=variant).set(state_map.get(state, 0))

    @staticmethod
    def write(path: Path) -> Optional[Path]:
        """Dump the registry in the Prometheus text format"""
        try:
            write_to_textfile(str(path), REGISTRY)
        except OSError as e:
            logger.error(f"Failed to write metrics to {path}: {e}")
            return None
        return path


def track_time(metric_histogram: Histogram, labels: dict = None):
    """
    Decorator to track function execution time

    Usage:
        @track_time(STEP_DURATION, {'variant': 'conical'})
        def step():
            pass
    """

    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs) -> Any:
            start_time = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                duration = time.perf_counter() - start_time
                if labels:
                    metric_histogram.labels(**labels).observe(duration)
                else:
                    metric_histogram.observe(duration)

        return wrapper

    return decorator

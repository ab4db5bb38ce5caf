"""
Step Controller
Halves the time step on solver failure and aborts a run that cannot recover
"""

import logging
from enum import Enum
from typing import Any, Callable, Optional

from conelab.errors import ConvergenceError, LabError, PositivityError
from conelab.utils.metrics import MetricsHelper

logger = logging.getLogger(__name__)


class StepControlState(Enum):
    """Step controller states"""

    NOMINAL = "nominal"  # Steps follow the schedule
    REDUCED = "reduced"  # Last attempt failed, dt has been halved
    ABORTED = "aborted"  # Halving budget spent, the run stops


class StepAbortedError(LabError):
    """Raised when the step controller gives up on a step"""

    code = "step_aborted"


class StepController:
    """
    Time-step controller for an implicit integrator

    States:
    - NOMINAL: steps are taken at the scheduled size
    - REDUCED: a step failed; it is retried at half the size
    - ABORTED: max_halvings consecutive halvings failed

    Transitions:
    NOMINAL -> REDUCED: a Newton or positivity failure
    REDUCED -> REDUCED: another failure while halvings remain
    REDUCED -> NOMINAL: the retried step succeeds
    REDUCED -> ABORTED: the halving budget is exhausted
    """

    def __init__(
        self,
        name: str,
        max_halvings: int = 8,
        expected_exceptions: tuple = (ConvergenceError, PositivityError),
    ):
        """
        Initialize step controller

        Args:
            name: Name of the controlled run (for logging and metrics)
            max_halvings: Number of consecutive halvings before aborting
            expected_exceptions: Exception types that trigger a retry
        """
        self.name = name
        self.max_halvings = max_halvings
        self.expected_exceptions = expected_exceptions

        self._state = StepControlState.NOMINAL
        self._halvings = 0
        self._total_halvings = 0
        self._last_error: Optional[Exception] = None

    @property
    def state(self) -> StepControlState:
        return self._state

    @property
    def total_halvings(self) -> int:
        return self._total_halvings

    @property
    def last_error(self) -> Optional[Exception]:
        return self._last_error

    def _record_state(self):
        MetricsHelper.record_step_controller_state(self.name, self._state.value)

    def _reduce(self, error: Exception):
        self._state = StepControlState.REDUCED
        self._halvings += 1
        self._total_halvings += 1
        self._last_error = error
        logger.warning(
            f"Step controller '{self.name}' halving dt "
            f"({self._halvings}/{self.max_halvings}): {error}"
        )
        MetricsHelper.record_dt_halving()
        self._record_state()

    def _abort(self):
        self._state = StepControlState.ABORTED
        logger.error(
            f"Step controller '{self.name}' aborted after {self._halvings} halvings"
        )
        self._record_state()

    def _recover(self):
        if self._state is StepControlState.REDUCED:
            logger.info(f"Step controller '{self.name}' back to nominal")
        self._state = StepControlState.NOMINAL
        self._halvings = 0
        self._record_state()

    def call(self, step: Callable[[float], Any], dt: float) -> tuple:
        """
        Take one step through the controller

        Args:
            step: callable taking the step size and returning the new state
            dt: scheduled step size

        Returns:
            (result, dt actually used)

        Raises:
            StepAbortedError: the step failed at every allowed size
        """
        if self._state is StepControlState.ABORTED:
            raise StepAbortedError(f"Step controller '{self.name}' is aborted")

        while True:
            try:
                result = step(dt)
            except self.expected_exceptions as e:
                if self._halvings >= self.max_halvings:
                    self._last_error = e
                    self._abort()
                    raise StepAbortedError(
                        f"Step controller '{self.name}' aborted: {e}",
                        halvings=self._halvings,
                        dt=dt,
                        cause=e.to_dict() if isinstance(e, LabError) else str(e),
                    ) from e
                self._reduce(e)
                dt = dt / 2.0
                continue

            self._recover()
            return result, dt

"""
Error hierarchy.

Every failure raised by the laboratory derives from LabError so the
command layer can turn it into a structured error document.
"""

from typing import Any, Optional, Sequence


class LabError(Exception):
    """Base class for laboratory failures"""

    code = "lab_error"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        return {
            "error": type(self).__name__,
            "code": self.code,
            "message": self.message,
            "details": self.details,
        }


class DomainError(LabError, ValueError):
    """Argument outside the domain of a closed-form quantity"""

    code = "domain_error"


class MeshError(LabError, ValueError):
    code = "mesh_error"


class ConfigError(LabError):
    """Invalid configuration file or value"""

    code = "config_error"

    def __init__(
        self,
        message: str,
        key: Optional[str] = None,
        line: Optional[int] = None,
        invariant: Optional[str] = None,
    ):
        super().__init__(message, key=key, line=line, invariant=invariant)
        self.key = key
        self.line = line
        self.invariant = invariant


class HorizonError(LabError, ValueError):
    code = "horizon_error"


class PositivityError(LabError):
    """Metric density fell to or below the positivity floor"""

    code = "positivity_error"

    def __init__(self, message: str, nodes: Sequence[int] = ()):
        nodes = [int(i) for i in nodes]
        super().__init__(message, nodes=nodes[:50], count=len(nodes))
        self.nodes = nodes


class ConvergenceError(LabError):
    """Newton iteration did not converge"""

    code = "convergence_error"

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        super().__init__(message, iterations=iterations, residual=residual)
        self.iterations = iterations
        self.residual = residual


class AdmissibilityError(LabError, ValueError):
    """Sub-solution parameters violate the class positivity condition"""

    code = "admissibility_error"


class ArtifactError(LabError):
    code = "artifact_error"

"""
Exception hierarchy for MeshLoc.
"""

from dataclasses import dataclass
from typing import Iterable, List


class MeshLocError(Exception):
    """Base class for every error raised by MeshLoc."""


@dataclass(frozen=True)
class ScenarioIssue:
    """A single problem found while validating a scenario file."""
    location: str
    message: str

    def __str__(self) -> str:
        if self.location:
            return f"{self.location}: {self.message}"
        return self.message


class ScenarioValidationError(MeshLocError):
    """Raised when a scenario file fails parsing, schema or semantic checks.

    All issues are collected before raising so the user sees every
    violation at once.
    """

    def __init__(self, issues: Iterable[ScenarioIssue]):
        self.issues: List[ScenarioIssue] = list(issues)
        super().__init__("\n".join(str(issue) for issue in self.issues))


class ConfigurationError(MeshLocError):
    """Invalid runtime configuration (unknown topic, bad override, bad log level)."""


class MalformedSessionError(MeshLocError):
    """A ranging session produced timestamps the estimator cannot use."""


class FrameDecodeError(MeshLocError):
    """Wire bytes could not be decoded into a frame."""


class OversizePayloadError(MeshLocError):
    """A payload exceeds the capacity of the frame it should ride in."""


class SchedulingError(MeshLocError):
    """An event was scheduled before the current simulation time."""


class LocalizationError(MeshLocError):
    """Base class for solver failures."""


class InsufficientAnchors(LocalizationError):
    """Fewer reference positions than the solver mode needs."""


class DegenerateGeometry(LocalizationError):
    """Reference positions are (nearly) collinear or coplanar."""

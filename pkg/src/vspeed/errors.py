"""Exception hierarchy shared by all stages.

Errors that mean "the input is unusable" derive from ``ValidationError`` so the
CLI can map them to exit code 2; everything else is a runtime failure.
"""

from __future__ import annotations


class VSpeedError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(VSpeedError, ValueError):
    """Input data violates a documented contract."""


# geometry
class NonOrthogonalVanishingPoints(ValidationError):
    pass


class DegenerateConfiguration(ValidationError):
    pass


class PointAboveHorizon(VSpeedError):
    pass


class MapsToInfinity(VSpeedError):
    pass


# cuboid
class OutOfBox(ValidationError):
    pass


class DegenerateBox(VSpeedError):
    pass


# detections
class ParseError(ValidationError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonMonotonicTimestamps(ValidationError):
    pass


# tracking / speed
class OutOfOrderFrame(VSpeedError):
    pass


class TooShort(VSpeedError):
    pass


class NoCrossing(VSpeedError):
    pass


# evaluation
class NoMatches(VSpeedError):
    pass


class EmptyGroundTruth(ValidationError):
    pass


# simulator
class BehindCamera(VSpeedError):
    pass


class InvalidScenario(ValidationError):
    pass


class StageError(VSpeedError):
    """A pipeline stage failed; carries the frame that triggered it."""

    def __init__(self, stage: str, frame_index: int, cause: BaseException):
        super().__init__(f"stage {stage!r} failed at frame {frame_index}: {cause}")
        self.stage = stage
        self.frame_index = frame_index
        self.cause = cause

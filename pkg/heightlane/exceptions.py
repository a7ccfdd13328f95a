"""
Domain Errors Module

Every error raised by the heightlane packages derives from HeightLaneError so the
CLI and the HTTP routes can map them to exit codes and status codes in one place.
"""


class HeightLaneError(Exception):
    """Base class for all domain errors."""


class ConfigError(HeightLaneError):
    pass


class CalibrationError(HeightLaneError):
    pass


class NoIntersection(HeightLaneError):
    """Back-projected ray is parallel to the plane or meets it behind the camera."""


class SlopeOutOfRange(HeightLaneError):
    pass


class OutOfGrid(HeightLaneError):
    pass


class GridMismatch(HeightLaneError):
    pass


class ParseError(HeightLaneError):
    pass


class NonRigidTransform(HeightLaneError):
    pass


class EmptyCloud(HeightLaneError):
    pass


class AllUnknown(HeightLaneError):
    pass


class ShapeMismatch(HeightLaneError):
    pass


class NonFinite(HeightLaneError):
    pass


class NonFiniteLoss(HeightLaneError):
    def __init__(self, message: str, batch_id: int = -1):
        super().__init__(message)
        self.batch_id = batch_id


class DegenerateLane(HeightLaneError):
    pass


class SpecInvalid(HeightLaneError):
    pass


class CheckpointMismatch(HeightLaneError):
    pass

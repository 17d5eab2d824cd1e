"""
Exceptions raised by TinyPose.

Every exception also derives from the builtin that describes it best, so
callers may catch either ``DataError`` or plain ``ValueError``.
"""

__all__ = (
    'TinyPoseError',
    'DataError',
    'ConfigError',
    'EmptyModelError',
    'DegeneratePairError',
    'ClassAbsentError',
    'PlacementError',
    'InfeasibleSelectionError',
    'SceneMismatchError',
    'BaseSamplingError',
    'InvariantViolation',
)


class TinyPoseError(Exception):
    """
    Base class of all TinyPose errors.
    """


class DataError(TinyPoseError, ValueError):
    """
    Some input (a mesh, a raster, a config file, a scene) is malformed.
    """


class ConfigError(DataError):
    """
    A configuration file contains unknown sections/keys or invalid values.
    """


class EmptyModelError(DataError):
    """
    A model has too few points for the requested operation.
    """


class DegeneratePairError(DataError):
    """
    A point pair feature was requested for two coincident points.
    """


class ClassAbsentError(DataError):
    """
    A class channel of the prediction maps carries no probability mass.
    """


class PlacementError(DataError):
    """
    The scene generator could not place all requested instances.
    """

    def __init__(self, class_id: int, message: str = ''):
        self.class_id = class_id
        super().__init__(message or f'Could not place instances of class '
                                    f'{class_id} inside the bin')


class InfeasibleSelectionError(DataError):
    """
    A selection violates a capacity or a conflict constraint.
    """


class SceneMismatchError(DataError):
    """
    Estimates and ground-truth scenes do not refer to the same scene ids.
    """


class BaseSamplingError(TinyPoseError, RuntimeError):
    """
    The retry budget for drawing a base was exhausted.

    This is an expected outcome of a single sampling attempt; the caller
    counts it and moves on.
    """


class InvariantViolation(TinyPoseError, AssertionError):
    """
    A guaranteed post-condition did not hold.
    """

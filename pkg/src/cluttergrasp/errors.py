"""Exception hierarchy shared across the package."""


class ClutterGraspError(Exception):
    """Base class for all package errors."""


class GenerationError(ClutterGraspError):
    """Scene generation could not place objects within the retry budget."""


class ObjectLookupError(ClutterGraspError, KeyError):
    """An object id is not present in the scene."""


class InvalidCandidateError(ClutterGraspError):
    """A grasp candidate's contacts do not lie on any object surface."""


class CameraError(ClutterGraspError, ValueError):
    pass


class EmptyCropError(ClutterGraspError):
    pass


class VisibilityError(ClutterGraspError):
    """Object projects to zero pixels even when rendered alone."""


class NoScoreError(ClutterGraspError):
    """Contact pair is not antipodal at the largest friction coefficient."""


class ParseError(ClutterGraspError, ValueError):
    pass


class SelectionError(ClutterGraspError):
    pass


class RemoteSelectorUnavailable(ClutterGraspError):
    """Remote selector failed after exhausting its retry policy."""


class NoGraspError(ClutterGraspError):
    pass


class StepSkipped(ClutterGraspError):
    """A planning step produced no executable action."""


class SceneFormatError(ClutterGraspError, ValueError):
    pass


class SuiteMismatchError(ClutterGraspError, ValueError):
    pass

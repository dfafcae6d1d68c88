"""Exception types raised across the package.

Every error that callers are expected to catch derives from PopupSlamError so
pipeline code can distinguish data/geometry problems from programming bugs.
"""


class PopupSlamError(Exception):
    """Base class for all package-specific errors."""


class RayParallelToPlane(PopupSlamError):
    """Pixel ray is (numerically) parallel to the target plane."""


class BehindCamera(PopupSlamError):
    """Ray-plane intersection landed at non-positive depth."""


class DegenerateEdge(PopupSlamError):
    """Ground edge endpoints coincide; wall normal undefined."""


class DegenerateVanishingPoints(PopupSlamError):
    """Vanishing directions too close to parallel to fix a rotation."""


class CameraBelowGround(PopupSlamError):
    """Camera center is not strictly above the ground plane."""


class EmptyFrame(PopupSlamError):
    """All candidate edges of a frame failed to back-project."""


class TooManyEdges(PopupSlamError):
    """Exhaustive subset search refused (would enumerate > 2**20 subsets)."""


class SingularSystem(PopupSlamError):
    """Normal equations rank-deficient beyond damping.

    Carries the offending direction of the state space (unit vector in the
    tangent chart) plus a human-readable split by variable, so callers can see
    which pose or landmark is unconstrained.
    """

    def __init__(self, message, free_direction=None, blame=None):
        super().__init__(message)
        self.free_direction = free_direction
        self.blame = blame


class LabelMismatch(PopupSlamError):
    """Attempted to merge/associate landmarks with different labels."""


class UnknownLandmark(PopupSlamError):
    """Referenced landmark id does not exist in the graph."""


class DegeneratePolygon(PopupSlamError):
    """Polygon has fewer than 3 vertices or vanishing area."""


class DimensionMismatch(PopupSlamError):
    """Raster inputs do not share a common shape."""


class LengthMismatch(PopupSlamError):
    """Trajectory comparison received sequences of different lengths."""


class InvalidSpec(PopupSlamError):
    """Scenario/corridor specification is inconsistent."""


class DataFormatError(PopupSlamError):
    """A dataset/config/trajectory file violates its line format.

    Attributes: path (str or None), line (1-based line number or None).
    """

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:"
        if line is not None:
            loc += f"{line}: "
        elif path is not None:
            loc += " "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class ConfigError(DataFormatError):
    """Configuration contains unknown keys or ill-typed values."""

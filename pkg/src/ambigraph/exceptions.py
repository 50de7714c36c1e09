"""Exception types raised across the package."""


class AmbigraphError(Exception):
    """Base class for all package errors."""


class NonPositiveDepth(AmbigraphError):
    """A point lies behind or on the camera plane."""


class DegenerateMatrix(AmbigraphError):
    """Projection onto SO(3) is undefined (rank < 2)."""


class DegenerateCorners(AmbigraphError):
    """Marker corners are collinear or repeated."""


class PlaneBehindCamera(AmbigraphError):
    """No planar pose hypothesis places the marker in front of the camera."""


class DisconnectedGraph(AmbigraphError):
    """The marker covisibility graph has more than one component."""

    def __init__(self, components):
        self.components = [sorted(c) for c in components]
        super().__init__(
            f"marker graph is disconnected into {len(self.components)} components: {self.components}"
        )


class TooLarge(AmbigraphError):
    """Exhaustive enumeration would exceed the configured bound."""


class UnobservedImage(AmbigraphError):
    """An image has no detection of a mapped marker."""


class DegenerateAlignment(AmbigraphError):
    """Fewer than three non-collinear points for rigid alignment."""


class NoDecisions(AmbigraphError):
    """Precision is undefined because every detection was discarded."""


class InsufficientData(AmbigraphError):
    """Too few detections survive selection to build a map."""


class DisconnectedScene(AmbigraphError):
    """Scene generation failed to produce a connected covisibility graph."""


class MissingGroundTruth(AmbigraphError):
    """Evaluation requested on a file without ground truth."""

"""Exception types shared across the package."""


class DoptLabError(Exception):
    """Base class for all package errors."""


class ShapeError(DoptLabError, ValueError):
    """Array dimensions disagree with the model they are used with."""


class ValidationError(DoptLabError, ValueError):
    """A model, policy or dataset violates its invariants."""


class CoverageError(DoptLabError):
    """The behavior policy does not cover the target where it must.

    ``location`` is the offending ``(t, s, a)`` triple when known and
    ``episode`` the episode index when raised during batch evaluation.
    """

    def __init__(self, message, location=None, episode=None):
        super().__init__(message)
        self.location = location
        self.episode = episode


class EnumerationCapError(DoptLabError):
    """Brute-force enumeration would exceed the configured path cap."""


class InfeasibleError(DoptLabError):
    """A request cannot be served (e.g. no ground truth available)."""

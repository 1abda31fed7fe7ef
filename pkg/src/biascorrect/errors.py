"""Exception types raised across the package."""


class BiasCorrectError(Exception):
    """Base class for every error raised by biascorrect."""


class BehindCamera(BiasCorrectError):
    """A point has (near) non-positive depth in the camera frame."""


class EmptySystem(BiasCorrectError):
    """Every observation was dropped while stacking residuals."""


class RankDeficient(BiasCorrectError):
    """The stacked pose Jacobian has numerical rank below 6."""


class Diverged(BiasCorrectError):
    """Gauss-Newton cost increased for several consecutive iterations."""


class UnknownPointId(BiasCorrectError, KeyError):
    """An observation or bias spec references a landmark that does not exist."""


class FoeUndefined(BiasCorrectError):
    """The translation has (almost) no forward component, so the FOE is at infinity."""


class DegenerateFeature(BiasCorrectError):
    """One or more features sit on the focus of expansion."""

    def __init__(self, indices, message=None):
        self.indices = tuple(int(i) for i in indices)
        super().__init__(message or f"features at the FOE: {list(self.indices)}")


class MismatchedPointSets(BiasCorrectError):
    """Two per-point estimates do not cover the same points."""


class InsufficientParallax(BiasCorrectError):
    """Triangulation baseline is too short."""


class TooFewPoints(BiasCorrectError):
    """Fewer accepted bias entries than needed for a pose correction."""


class InfeasibleConfig(BiasCorrectError):
    """A scene could not be generated from the configuration."""


class ConfigError(BiasCorrectError):
    """A configuration file or override is invalid."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ParseError(BiasCorrectError):
    """A trajectory file line could not be parsed."""

    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class NonMonotonicTimestamps(BiasCorrectError):
    """Trajectory timestamps are not strictly increasing."""


class NoMatches(BiasCorrectError):
    """No timestamps could be associated between two trajectories."""

"""Exception hierarchy shared across the library."""


class PlenregError(Exception):
    """Base class for all library errors."""


class FrameMismatch(PlenregError):
    """Frame labels of two poses do not chain or do not agree."""


class DegenerateConfiguration(PlenregError):
    """Geometric configuration is rank-deficient (collinear, coplanar, ...)."""


class InvalidDepth(PlenregError):
    """Virtual depth outside the valid (positive) range."""


class NoConvergence(PlenregError):
    """Iterative solver did not reach its stopping tolerance."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class BehindCamera(PlenregError):
    """Point has non-positive depth in the camera frame."""


class MalformedXml(PlenregError):
    pass


class MissingField(PlenregError):
    def __init__(self, name):
        super().__init__(f"missing field: {name}")
        self.name = name


class OutOfRange(PlenregError):
    def __init__(self, name, detail=""):
        super().__init__(f"field out of range: {name} {detail}".rstrip())
        self.name = name


class UnknownLensType(PlenregError):
    pass


class DimensionMismatch(PlenregError):
    """Descriptor sets with unequal dimensionality."""


class EmptySet(PlenregError):
    """An operation received an empty descriptor or point set."""


class InsufficientMatches(PlenregError):
    pass


class InsufficientCorrespondences(PlenregError):
    pass


class NoConsensus(PlenregError):
    """RANSAC could not find a model with enough inliers."""


class MalformedCsv(PlenregError):
    pass


class UnknownObject(PlenregError):
    pass


class IndexOutOfRange(PlenregError):
    pass


class CollinearMarkers(PlenregError):
    pass


class ValidationFailed(PlenregError):
    def __init__(self, message, measured=None):
        super().__init__(message)
        self.measured = measured


class LengthMismatch(PlenregError):
    pass


class ConfigError(PlenregError):
    pass


class StageError(PlenregError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage, error):
        super().__init__(f"[{stage}] {error}")
        self.stage = stage
        self.error = error

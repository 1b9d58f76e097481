"""Exception types shared across the package.

Plain ValueError is used for malformed arguments (bad shapes, out-of-range
indices, invalid windows). The types below mark conditions that callers
commonly want to catch separately.
"""


class ZoomdetError(Exception):
    """Base class for package-specific failures."""


class ConfigError(ZoomdetError):
    """Invalid or inconsistent configuration."""


class AnnotationError(ZoomdetError):
    """Annotation record that cannot be used (bad sizes, degenerate landmarks)."""


class NumericError(ZoomdetError):
    """Numerical breakdown (NaN/Inf) detected during training or inference."""


class DimensionError(ZoomdetError):
    """Layer chain cannot process the given spatial dimensions."""

"""Exception types shared across the package."""


class GroundmineError(Exception):
    """Base class for all package-specific failures."""


class FormatError(GroundmineError):
    """A binary or manifest file is malformed (bad magic, version, truncation)."""


class ValidationError(GroundmineError):
    """Data violates a documented invariant or precondition."""


class DegenerateFeatureError(GroundmineError):
    """A feature vector has (near-)zero norm where a direction is required."""

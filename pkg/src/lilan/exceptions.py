"""Error types shared across the package.

Each failure mode that callers are expected to distinguish gets its own
class; everything derives from LilanError so the CLI can map categories
to exit codes.
"""


class LilanError(Exception):
    """Base class for all package errors."""


class InvalidArchitectureError(LilanError):
    """Layer-size list is empty, too short, or contains non-positive sizes."""


class ShapeError(LilanError):
    """An array argument has the wrong width or an inconsistent shape."""


class TapeMismatchError(LilanError):
    """A gradient tape was produced by a different network or batch."""


class UnfittedTransformError(LilanError):
    """Transforms were applied before being fitted to data."""


class TransformDomainError(LilanError):
    """A value lies outside the domain of a transform (e.g. log of <= 0)."""


class SolverFailureError(LilanError):
    """Newton iteration failed to converge even after step-size reductions."""


class StepBudgetError(LilanError):
    """The integrator exceeded its maximum number of steps."""


class GridError(LilanError):
    """Requested output times do not lie on the integrator's step grid."""


class DatasetFormatError(LilanError):
    """Dataset file is corrupt, truncated, or has inconsistent shapes."""


class DatasetVersionError(DatasetFormatError):
    """Dataset file was written by an unsupported format version."""


class ConfigError(LilanError):
    """Run configuration is missing keys or holds out-of-range values."""


class DivergenceError(LilanError):
    """Training produced a non-finite loss."""

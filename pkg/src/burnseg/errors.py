"""Exception types shared across the package.

Everything raised on purpose derives from BurnsegError so the CLI can
map domain failures to a single exit code.
"""


class BurnsegError(Exception):
    """Base class for all domain errors."""


class DimensionError(BurnsegError):
    """Grid construction or combination with inconsistent shapes."""


class BoundsError(BurnsegError):
    """Window or index outside the grid."""


class LabelDomainError(BurnsegError):
    """Label raster contains a value outside its declared domain."""


class IncompleteSceneError(BurnsegError):
    """Scene is missing required bands or label files."""

    def __init__(self, message: str, missing: list[str] | None = None):
        super().__init__(message)
        self.missing = missing or []


class ShapeConsistencyError(BurnsegError):
    """Raster shapes disagree with what the scene metadata implies."""


class ManifestError(BurnsegError):
    """Manifest fails schema or integrity validation."""


class SplitError(BurnsegError):
    """Requested dataset split is not realizable."""


class TiffFormatError(BurnsegError):
    """File is not a TIFF this package can read (bad magic, big-endian, ...)."""


class TiffUnsupportedError(TiffFormatError):
    """Valid TIFF but outside the supported subset (compression, tiling, ...)."""


class CorruptFileError(TiffFormatError):
    """Structurally broken file: truncated strips, offsets past EOF, ..."""


class PlanError(BurnsegError):
    """Tile plan is not realizable (tile larger than image, bad stride, ...)."""


class CoverageError(BurnsegError):
    """Blending found pixels with zero accumulated weight."""


class ConfigError(BurnsegError):
    """Invalid or contradictory configuration."""


class CacheError(BurnsegError):
    """Forward cache does not match the current network parameters."""


class TrainingAbortedError(BurnsegError):
    """Training stopped because of non-finite losses or gradients."""


class UndefinedMetricError(BurnsegError):
    """Metric has no defined value (no classes with support, ...)."""

"""Exception types shared across the package."""


class PoseLatentError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(PoseLatentError, ValueError):
    """Operand shapes are incompatible; message names both shapes."""


class ArchiveError(PoseLatentError, IOError):
    """A tensor archive is malformed or cannot be read/written."""


class RenderError(PoseLatentError, ValueError):
    """A mesh/pose/camera combination cannot be rasterized."""


class EstimationError(PoseLatentError, ValueError):
    """Pose estimation cannot proceed (empty codebook, empty depth, ...)."""


class RefinementError(PoseLatentError, ValueError):
    """ICP refinement failed (degenerate geometry, no correspondences)."""


class ConfigError(PoseLatentError, ValueError):
    """A config file or CLI argument set is invalid."""


class TrainingError(PoseLatentError, RuntimeError):
    """Training hit a non-finite loss; message carries the iteration and parts."""

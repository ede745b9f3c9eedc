"""Exception types shared across the package."""


class FramefillError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(FramefillError, ValueError):
    """A numeric parameter is non-finite or outside its legal range."""


class ShapeMismatchError(FramefillError, ValueError):
    """Array operands do not have the shapes the operation requires."""


class DegenerateGeometryError(FramefillError):
    """A geometric fit is under-determined or numerically ill-conditioned."""


class NoConsensusError(FramefillError):
    """Robust fitting found no model supported by enough inliers."""


class InsufficientOverlapError(FramefillError):
    """Two masked operands share too few valid pixels to compare."""


class AlignmentError(FramefillError):
    """The alignment chain failed to produce a usable transform."""


class PyramidError(FramefillError, ValueError):
    """Frames are too small for the requested pyramid depth."""


class UndefinedMetricError(FramefillError):
    """A metric was requested on an empty support (e.g. PSNR with no hole)."""


class SequenceError(FramefillError):
    """Frame/mask sequence I/O failed (missing file, count or size mismatch)."""

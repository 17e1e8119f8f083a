"""Exception types shared across the package."""


class FacepipeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidBoxError(FacepipeError):
    """A bounding box has non-positive or sub-pixel extents."""


class DegenerateLandmarksError(FacepipeError):
    """Eye centers coincide; no roll angle can be derived."""


class EmptyHistogramError(FacepipeError):
    """A channel histogram contains no samples."""


class ManifestError(FacepipeError):
    """A manifest file is malformed or inconsistent."""


class TrainingDivergedError(FacepipeError):
    """A loss or gradient became non-finite during training."""


class MissingArtifactError(FacepipeError):
    """A required input file (normalized image, fold plan, ...) is absent."""

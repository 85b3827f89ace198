"""Exception types shared across the package."""


class FisheyeBenchError(Exception):
    """Base class for all package errors."""


# geometry
class OutOfCircleError(FisheyeBenchError):
    """Pixel lies outside the fisheye image circle."""


class InvalidDistanceError(FisheyeBenchError):
    """Distance is non-positive, NaN, or above the validity cap."""


# polar
class ModelMismatchError(FisheyeBenchError):
    """Image circle of the camera model exceeds the image bounds."""


class OutOfRangeError(FisheyeBenchError):
    """Polar coordinate falls outside the rectified grid."""


# dataset
class MissingFileError(FisheyeBenchError):
    """A file referenced by a manifest does not exist."""


class DimensionMismatchError(FisheyeBenchError):
    """Per-frame files disagree on resolution."""


class BadPoseRecordError(FisheyeBenchError):
    """A trajectory record could not be parsed."""


class CorruptFileError(FisheyeBenchError):
    """A data file could not be decoded."""


class UnknownEncodingError(FisheyeBenchError):
    """Distance-map encoding name is not recognized."""


class VersionMismatchError(FisheyeBenchError):
    """Keypoint file has a wrong magic or unsupported version."""


class TruncatedFileError(FisheyeBenchError):
    """Keypoint file ends before the declared record count."""


# features
class ImageTooSmallError(FisheyeBenchError):
    """Image is smaller than one filter support."""


class EmptyInputError(FisheyeBenchError):
    """No keypoints supplied to the descriptor."""


# matching
class TypeMismatchError(FisheyeBenchError):
    """Descriptor sets have incompatible types or widths."""


class UnsupportedMetricError(FisheyeBenchError):
    """Matcher cannot handle the descriptor metric (e.g. approximate NN on bits)."""


# oracle
class MissingDistanceMapError(FisheyeBenchError):
    """Stereo pair carries no distance map for a view."""


class ZeroDetectionsError(FisheyeBenchError):
    """Metric denominator (minimum detection count) is zero."""


# calib
class OutOfDomainError(FisheyeBenchError):
    """a * r > 1: radius outside the equisolid model domain."""


class DegenerateError(FisheyeBenchError):
    """Design matrix is rank-deficient; no unique essential matrix."""


class TooFewMatchesError(FisheyeBenchError):
    """Fewer matches than the minimal sample size."""


class NoModelError(FisheyeBenchError):
    """No RANSAC iteration produced an acceptable model."""


class TooFewRunsError(FisheyeBenchError):
    """Statistics require at least two calibration runs."""


# cli
class BadConfigError(FisheyeBenchError):
    """Experiment configuration is invalid; message carries the field."""

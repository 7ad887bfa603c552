"""Exception types shared across the package."""


class CidlabError(Exception):
    """Base class for all package-specific errors."""


class ZeroVectorError(CidlabError):
    """A vector with (near-)zero norm reached a normalization step."""


class ShapeMismatchError(CidlabError):
    """Array shapes disagree with what the operation requires."""


class NonFiniteError(CidlabError):
    """A NaN or Inf appeared where only finite values are allowed."""


class EmptyNegativesError(CidlabError):
    """A difficulty ranking was requested over zero negatives."""


class BatchTooLargeError(CidlabError):
    """An enqueued batch exceeds the queue capacity."""


class ReserveExhaustedError(CidlabError):
    """A replacement policy needs more reserve entries than the queue holds."""


class VersionMismatchError(CidlabError):
    """A checkpoint file carries an unsupported format version."""


class CorruptChecksumError(CidlabError):
    """A checkpoint file is truncated, malformed, or fails its CRC."""


class MalformedRecordError(CidlabError):
    """A CIFAR-10 binary file has a bad length or an out-of-range label."""


class UnknownLabelError(CidlabError):
    """A class label has no leaf in the class tree."""


class DegenerateLabelsError(CidlabError):
    """A classifier fit was requested with fewer than two classes."""


class EmptyInputError(CidlabError):
    """An analysis was requested over an empty query or negative set."""


class InsufficientInstancesError(CidlabError):
    """A per-class statistic needs more instances than a class provides."""


class ConfigError(CidlabError):
    """A config file or override contains an unknown key or a bad value."""


class GridTooLargeError(CidlabError):
    """A sweep grid exceeds the allowed number of points."""

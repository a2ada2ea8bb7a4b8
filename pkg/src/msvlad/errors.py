"""Exception types shared across the package.

Everything raised on bad *input* (malformed files, inconsistent shapes,
out-of-domain values) derives from :class:`ValidationError`, which the CLI
maps to exit code 2. Other package errors map to exit code 1.
"""


class MsvladError(Exception):
    """Base class for all package errors."""


class ValidationError(MsvladError):
    """Invalid input: caller can fix the request, not the code."""


class DimensionError(ValidationError):
    """Array shapes or sizes do not line up."""


class DomainError(ValidationError):
    """A value is outside its allowed domain."""


class NonFiniteError(ValidationError):
    """NaN or infinity where only finite values are allowed."""


class TensorFormatError(ValidationError):
    """A tensor file does not follow the binary layout."""


class BadMagicError(TensorFormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(TensorFormatError):
    """Tensor file version is not understood by this reader."""


class UnsupportedDtypeError(TensorFormatError):
    """Tensor file dtype code is not understood by this reader."""


class TruncatedFileError(TensorFormatError):
    """Tensor file ends before its declared payload does."""


class ManifestError(ValidationError):
    """A dataset manifest failed validation."""


class DuplicateEntryError(ManifestError):
    """Two manifest entries share the same (id, resolution)."""


class DanglingPathError(ManifestError):
    """A manifest entry points at a missing or unreadable feature file."""


class ChannelMismatchError(ManifestError):
    """Feature files in one manifest disagree on channel count."""


class DanglingRelevanceError(ManifestError):
    """Relevance ground truth references an unknown image id."""


class InsufficientSamplesError(ValidationError):
    """Fewer samples than clusters requested."""


class InsufficientClassesError(ValidationError):
    """Fewer distinct classes than the mining configuration needs."""


class MissingFeatureError(ValidationError):
    """An image lacks a feature file at a requested resolution."""


class MissingRelevanceError(ValidationError):
    """A query has no relevance ground truth."""


class CheckpointError(ValidationError):
    """A checkpoint directory is missing files or internally inconsistent."""


class CacheError(MsvladError):
    """A forward cache does not match the parameters it is used with."""


class MiningExhaustedError(MsvladError):
    """Mining repeatedly produced empty triplet pools."""

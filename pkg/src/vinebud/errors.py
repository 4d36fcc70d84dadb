"""Exception types shared across the package."""


class VinebudError(Exception):
    """Base class for all package errors."""


class ArgumentError(VinebudError, ValueError):
    """A caller violated an operation precondition."""


class DecodeError(VinebudError):
    """An image byte stream could not be decoded."""


class FormatError(VinebudError):
    """A persisted artifact (vocabulary, model, manifest) is malformed."""


class CorpusError(VinebudError):
    """A corpus manifest or its sidecar files violate the schema."""


class TrainingError(VinebudError):
    """The SVM solver failed to reach the requested KKT tolerance."""

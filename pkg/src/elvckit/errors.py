"""Exception hierarchy shared by all elvckit modules."""


class ElvcError(Exception):
    """Base class for all toolkit errors."""


class InvalidInput(ElvcError):
    """An argument violates a documented precondition."""


class IoError(ElvcError):
    """Reading or writing a file failed at the OS level."""


class CorruptFile(ElvcError):
    """A feature or checkpoint file is structurally damaged."""


class InvalidData(ElvcError):
    """File parsed but its payload is unusable (NaN, wrong range)."""


class DomainMismatch(ElvcError):
    """A feature sequence has the wrong domain or dimensionality."""


class HopMismatch(ElvcError):
    """A feature sequence has an unexpected hop size."""


class InvalidManifest(ElvcError):
    """A corpus manifest is malformed or inconsistent."""


class MissingFile(ElvcError):
    """A file referenced by a manifest does not exist."""


class BoundaryMismatch(ElvcError):
    """Word boundary annotations do not pair up across utterances."""


class ShapeError(ElvcError):
    """Tensor shapes are incompatible for the requested operation."""


class NoEncoder(ElvcError):
    """The model has no encoder for the requested feature domain."""


class NoDecoder(ElvcError):
    """The model has no decoder for the requested feature domain."""


class NotPretrained(ElvcError):
    """An operation requires trained parameters that are absent."""


class IncompatibleCheckpoint(ElvcError):
    """A checkpoint file cannot be loaded into the current model."""


class InvalidSpeaker(ElvcError):
    """A speaker id is not present in the model's speaker table."""


class MissingPair(ElvcError):
    """A parallel utterance referenced for evaluation is absent."""


class NonFiniteError(ElvcError):
    """A numeric operation produced NaN or infinity."""

"""Exception hierarchy shared across ampgan."""


class AmpganError(Exception):
    """Base class for all ampgan errors."""


class IngestionError(AmpganError):
    pass


class EmptyInputError(AmpganError):
    pass


class NormalizationError(AmpganError):
    pass


class SplitError(AmpganError):
    pass


class BatchingError(AmpganError):
    pass


class PairingError(AmpganError):
    pass


class ConfigError(AmpganError):
    pass


class ShapeError(AmpganError):
    pass


class NonFiniteInputError(AmpganError):
    """Raised when NaN/Inf reaches a network input."""


class NumericalError(AmpganError):
    pass


class EmbeddingError(AmpganError):
    pass


class DivergenceError(AmpganError):
    """Training produced a non-finite loss.

    ``checkpoint_path`` points at the last good state written before raising.
    """

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class CheckpointError(AmpganError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class CheckpointIncompatibleError(CheckpointError):
    pass

"""Exception types shared across the package."""


class ASRError(Exception):
    """Base class for all errors raised by convctc."""


class DataError(ASRError, ValueError):
    """Malformed or unusable input data (audio, manifests, transcripts)."""


class AudioFormatError(DataError):
    """A WAV file outside the supported PCM16 mono subset."""


class CTCInfeasibleError(DataError):
    """A label sequence cannot be aligned to the available frames."""


class NumericalError(ASRError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class ConfigError(ASRError, ValueError):
    """Invalid run configuration."""

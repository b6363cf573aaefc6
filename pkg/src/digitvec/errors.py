"""Exception hierarchy shared across the toolkit."""


class DigitvecError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DigitvecError):
    """Invalid or inconsistent configuration."""


class EmptyUtterance(DigitvecError):
    """Utterance too short (or too silent) to process."""


class MissingDigit(DigitvecError):
    """A digit required for training never occurs in the corpus."""

    def __init__(self, digit):
        self.digit = digit
        super().__init__(f"digit {digit} absent from training corpus")


class AlignmentInfeasible(DigitvecError):
    """Fewer voiced frames than HMM states on the forced-alignment path."""


class ShapeError(DigitvecError):
    """Dimension mismatch between model parameters and data."""


class NumericalError(DigitvecError):
    """A matrix that must be positive definite is not."""


class EmptyInput(DigitvecError):
    """An aggregate was requested over an empty collection."""


class ZeroVector(DigitvecError):
    """A direction-only operation received the zero vector."""


class DegenerateScatter(DigitvecError):
    """Scatter decomposition needs at least two speaker classes."""


class IncompatibleTrial(DigitvecError):
    """No digit of the test utterance is present in the enrolled model."""


class TrialMismatch(DigitvecError):
    """Score lists to fuse do not cover the same trials."""


class DegenerateTrialSet(DigitvecError):
    """Trial set lacks target or nontarget scores."""


class ParseError(DigitvecError):
    """Malformed line in a manifest or trial list."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class VersionError(DigitvecError):
    """Model bundle written by an incompatible format version."""


class CorruptBundle(DigitvecError):
    """Model bundle failed checksum or structural validation."""

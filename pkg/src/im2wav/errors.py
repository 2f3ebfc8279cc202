"""Exception hierarchy shared across the package."""


class Im2WavError(Exception):
    """Base class for all package errors."""


class ValidationError(Im2WavError):
    """Invalid argument or domain-type invariant violation."""


class FormatError(Im2WavError):
    """A file failed to parse: bad magic, truncation, schema violation."""


class MissingArtifactError(Im2WavError):
    """A required file (checkpoint, manifest entry, ...) does not exist."""


class DataMismatchError(Im2WavError):
    """Dataset and model artifacts disagree (sample rate, vocabulary, ...)."""


class TrainingDiverged(Im2WavError):
    """Training hit a non-finite loss. Carries the last good state."""

    def __init__(self, message: str, step: int, last_good_state: dict | None = None):
        super().__init__(message)
        self.step = step
        self.last_good_state = last_good_state

class ClipExportError(Exception):
    """Base for failures the CLI reports with a message and a nonzero exit."""


class MediaDecodeError(ClipExportError):
    """Input could not be decoded into frames."""


class MissingWeightsError(ClipExportError):
    """Pretrained backend weights are not available locally or via the cache."""

"""Batch exporter: image embeddings in the IM2WEMB1 interchange format."""

from .backends import (
    BACKEND_NAMES,
    EMBED_DIM,
    HashProjectionBackend,
    PretrainedClipBackend,
    make_backend,
)
from .errors import ClipExportError, MediaDecodeError, MissingWeightsError
from .export import ExportJob, export
from .interchange import MAGIC, write_interchange
from .media import FrameSet, even_indices, load_frames

__all__ = [
    "BACKEND_NAMES",
    "EMBED_DIM",
    "MAGIC",
    "ClipExportError",
    "ExportJob",
    "FrameSet",
    "HashProjectionBackend",
    "MediaDecodeError",
    "MissingWeightsError",
    "PretrainedClipBackend",
    "even_indices",
    "export",
    "load_frames",
    "make_backend",
    "write_interchange",
]

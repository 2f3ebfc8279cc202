"""Writer for the IM2WEMB1 embedding interchange format.

Layout: 8-byte magic, little-endian uint32 frame count and dimension, the
frames as row-major float32, then an optional JSON metadata trailer. This
must stay byte-compatible with the consumer's loader; the format, not any
shared code, is the contract between the two tools.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"IM2WEMB1"


def write_interchange(
    frames: np.ndarray, path: str | Path, metadata: dict | None = None
) -> None:
    """Write an (M, d) float32 array atomically (temp file + rename)."""
    rows = np.ascontiguousarray(frames, dtype="<f4")
    if rows.ndim != 2:
        raise ValueError(f"frames must be 2-D (M, d), got shape {rows.shape}")
    if rows.shape[0] < 1 or rows.shape[1] < 1:
        raise ValueError(f"frames must be non-empty in both axes, got shape {rows.shape}")
    if not np.all(np.isfinite(rows)):
        raise ValueError("frames contain non-finite values")
    blob = MAGIC + struct.pack("<II", rows.shape[0], rows.shape[1]) + rows.tobytes()
    if metadata:
        blob += json.dumps(metadata, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)

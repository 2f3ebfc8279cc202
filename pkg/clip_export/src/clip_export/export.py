"""Job validation and the export pipeline: frames -> embeddings -> interchange file."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import EMBED_DIM
from .interchange import write_interchange
from .media import load_frames


@dataclass
class ExportJob:
    """One clip to embed: a still image, a directory of stills, or a video."""

    input_path: Path
    frames: int
    output_path: Path

    def __post_init__(self):
        self.input_path = Path(self.input_path)
        self.output_path = Path(self.output_path)
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")


def export(job: ExportJob, backend) -> dict:
    """Run one job; returns the summary the CLI prints."""
    frame_set = load_frames(job.input_path, job.frames)
    rows = np.asarray(backend.embed(frame_set.images), dtype=np.float32)
    if rows.shape != (job.frames, EMBED_DIM):
        raise RuntimeError(
            f"backend {backend.name!r} returned shape {rows.shape}, "
            f"expected ({job.frames}, {EMBED_DIM})"
        )
    # Normalize in double so the stored float32 rows are unit length to well
    # under the consumer's 1e-5 check.
    wide = rows.astype(np.float64)
    norms = np.linalg.norm(wide, axis=1)
    if np.any(norms < 1e-12):
        raise RuntimeError(f"backend {backend.name!r} produced a zero embedding")
    rows = (wide / norms[:, None]).astype(np.float32)
    metadata = {
        "source_id": str(job.input_path),
        "frame_indices": frame_set.source_indices,
    }
    if frame_set.timestamps_s is not None:
        metadata["frame_timestamps"] = frame_set.timestamps_s
    write_interchange(rows, job.output_path, metadata)
    return {
        "input": str(job.input_path),
        "output": str(job.output_path),
        "frames": int(rows.shape[0]),
        "dim": int(rows.shape[1]),
        "backend": backend.name,
    }

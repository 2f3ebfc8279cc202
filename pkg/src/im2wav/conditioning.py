"""Image-embedding conditioning: clips, aggregation, alignment, CFG dropout.

A clip is a short sequence of per-frame image embeddings. Conditioning a
token model uses two views of it: a single aggregated vector (frame mean
pushed through a small MLP) applied at every position, and optionally the
temporally-aligned frame vector for each token position.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from im2wav.errors import FormatError, ValidationError

EMBEDDING_DIM = 512  # matches the ViT-B/32 interchange contract

EMBEDDING_MAGIC = b"IM2WEMB1"


@dataclass
class EmbeddingClip:
    """M per-frame embedding vectors of uniform dimension, in time order."""

    frames: np.ndarray  # (M, d) float32
    source_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2:
            raise ValidationError(f"frames must be 2-D (M, d), got shape {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValidationError("clip must contain at least one frame")
        if self.frames.shape[1] < 1:
            raise ValidationError("embedding dimension must be at least 1")
        if not np.all(np.isfinite(self.frames)):
            raise ValidationError("clip contains non-finite embedding values")

    @property
    def frame_count(self) -> int:
        return int(self.frames.shape[0])

    @property
    def dim(self) -> int:
        return int(self.frames.shape[1])


@dataclass
class AggregatedCondition:
    """Single conditioning vector: the aggregator output, or the learned null."""

    y_tilde: np.ndarray
    is_null: bool = False

    def __post_init__(self):
        self.y_tilde = np.asarray(self.y_tilde, dtype=np.float32).reshape(-1)
        if not np.all(np.isfinite(self.y_tilde)):
            raise ValidationError("aggregated condition is non-finite")


def write_embedding_clip(clip: EmbeddingClip, path: str | Path, metadata: dict | None = None) -> None:
    """Write a clip in the interchange format (atomically: temp file + rename)."""
    buf = io.BytesIO()
    buf.write(EMBEDDING_MAGIC)
    buf.write(struct.pack("<II", clip.frame_count, clip.dim))
    buf.write(np.ascontiguousarray(clip.frames, dtype="<f4").tobytes())
    meta = dict(metadata or {})
    if clip.source_id and "source_id" not in meta:
        meta["source_id"] = clip.source_id
    if meta:
        buf.write(json.dumps(meta, sort_keys=True).encode("utf-8"))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_embedding_clip(path: str | Path) -> EmbeddingClip:
    """Load and validate an interchange file; never returns a partial clip."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16:
        raise FormatError(f"{path}: file too short for header")
    if data[:8] != EMBEDDING_MAGIC:
        raise FormatError(
            f"{path}: bad magic {data[:8]!r}, expected {EMBEDDING_MAGIC!r}"
        )
    m, d = struct.unpack("<II", data[8:16])
    if m < 1:
        raise FormatError(f"{path}: frame_count must be >= 1, got {m}")
    if d < 1:
        raise FormatError(f"{path}: dimension must be >= 1, got {d}")
    end = 16 + 4 * m * d
    if len(data) < end:
        raise FormatError(
            f"{path}: truncated payload, need {end - 16} bytes of floats, have {len(data) - 16}"
        )
    frames = np.frombuffer(data[16:end], dtype="<f4").reshape(m, d).copy()
    if not np.all(np.isfinite(frames)):
        raise FormatError(f"{path}: embedding payload contains non-finite values")
    source_id = ""
    if len(data) > end:
        try:
            meta = json.loads(data[end:].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"{path}: trailing metadata is not valid JSON: {e}") from e
        if isinstance(meta, dict):
            source_id = str(meta.get("source_id", ""))
    return EmbeddingClip(frames=frames, source_id=source_id)


def align_index(token_index: int, tokens_total: int, frame_count: int) -> int:
    """Frame index for a token position: floor(s*M/S), clamped to the last frame.

    Monotone in the token index, and hits every frame when M <= S.
    """
    if tokens_total < 1:
        raise ValidationError(f"tokens_total must be >= 1, got {tokens_total}")
    if not 0 <= token_index < tokens_total:
        raise ValidationError(
            f"token index {token_index} outside [0, {tokens_total})"
        )
    m = (token_index * frame_count) // tokens_total
    return min(m, frame_count - 1)


def align_frame(token_index: int, tokens_total: int, clip: EmbeddingClip) -> np.ndarray:
    """The clip frame temporally aligned with a token position."""
    return clip.frames[align_index(token_index, tokens_total, clip.frame_count)]


def aligned_frame_matrix(clip: EmbeddingClip, tokens_total: int) -> np.ndarray:
    """All aligned frames at once: (tokens_total, d)."""
    idx = [align_index(s, tokens_total, clip.frame_count) for s in range(tokens_total)]
    return clip.frames[idx]


def cfg_dropout(
    clips: list[EmbeddingClip], p: float, rng: np.random.Generator
) -> tuple[list[EmbeddingClip], np.ndarray]:
    """Per-sample conditioning dropout for guidance training.

    Returns the batch unchanged plus a boolean flag per sample; flagged
    samples must have their conditioning swapped for the learned null
    embedding downstream (the null lives in model parameters, so the swap
    happens in tensor space, not here).
    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"dropout probability must be in [0, 1], got {p}")
    flags = rng.random(len(clips)) < p
    return clips, flags


class AggregatorMLP(nn.Module):
    """Three linear layers over the frame mean; ReLU after the first two."""

    def __init__(self, emb_dim: int = EMBEDDING_DIM, cond_dim: int = 256):
        super().__init__()
        self.emb_dim = emb_dim
        self.cond_dim = cond_dim
        self.layers = nn.Sequential(
            nn.Linear(emb_dim, cond_dim),
            nn.ReLU(),
            nn.Linear(cond_dim, cond_dim),
            nn.ReLU(),
            nn.Linear(cond_dim, cond_dim),
        )

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """frames: (..., M, emb_dim) -> (..., cond_dim); mean over the frame axis."""
        if frames.shape[-1] != self.emb_dim:
            raise ValidationError(
                f"frame dimension {frames.shape[-1]} does not match aggregator input {self.emb_dim}"
            )
        return self.layers(frames.mean(dim=-2))

    def from_mean(self, frame_mean: torch.Tensor) -> torch.Tensor:
        """Apply the MLP to an already-averaged (..., emb_dim) clip vector."""
        if frame_mean.shape[-1] != self.emb_dim:
            raise ValidationError(
                f"mean dimension {frame_mean.shape[-1]} does not match aggregator input {self.emb_dim}"
            )
        return self.layers(frame_mean)


class NullCondition(nn.Module):
    """Learned null vectors: one in the aggregated-condition role, one per-frame.

    Initialized from a small-variance Gaussian so untrained guidance starts
    near the unconditional model.
    """

    INIT_STD = 0.01

    def __init__(self, emb_dim: int = EMBEDDING_DIM, cond_dim: int = 256):
        super().__init__()
        self.null_y = nn.Parameter(torch.empty(cond_dim))
        self.null_f = nn.Parameter(torch.empty(emb_dim))

    def reset(self, generator: torch.Generator | None = None):
        with torch.no_grad():
            for p in (self.null_y, self.null_f):
                p.copy_(torch.randn(p.shape, generator=generator, dtype=p.dtype) * self.INIT_STD)


def aggregate(clip: EmbeddingClip, mlp: AggregatorMLP) -> AggregatedCondition:
    """Aggregated condition for one clip (inference path, no gradients)."""
    with torch.no_grad():
        frames = torch.from_numpy(clip.frames).to(next(mlp.parameters()).dtype)
        y = mlp(frames)
    return AggregatedCondition(y_tilde=y.numpy(), is_null=False)


def null_condition(null: NullCondition) -> tuple[AggregatedCondition, np.ndarray]:
    """The learned null pair: (aggregated-role vector, per-frame vector)."""
    with torch.no_grad():
        y = AggregatedCondition(
            y_tilde=null.null_y.detach().cpu().numpy(), is_null=True
        )
        f = null.null_f.detach().cpu().numpy().copy()
    return y, f


@dataclass
class ConditioningBundle:
    """Tensors a token model consumes for one batch.

    `per_token_frames` is present iff the model uses every-token frame
    conditioning; `low_tokens_upsampled` is present only for the fine-level
    model, already repeated to its sequence length.
    """

    y_tilde: torch.Tensor  # (B, cond_dim)
    is_null: torch.Tensor = field(default_factory=lambda: torch.zeros(0, dtype=torch.bool))
    per_token_frames: torch.Tensor | None = None  # (B, S, emb_dim)
    low_tokens_upsampled: torch.Tensor | None = None  # (B, S) long

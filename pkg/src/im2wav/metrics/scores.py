"""Relevance and class-level metrics over generated audio.

clip_score: scaled cosine between each image frame and one audio embedding,
averaged over frames. paired_kl: mean KL between per-pair class posteriors.
accuracy: argmax agreement with conditioning labels, ties to lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from im2wav.conditioning import EmbeddingClip
from im2wav.errors import ValidationError

DEFAULT_GAMMA = 100.0
_KL_FLOOR = 1e-10
_SUM_TOL = 1e-6


@dataclass(frozen=True)
class ClassPosterior:
    probs: np.ndarray  # (C,), nonnegative, sums to 1

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if p.size < 2:
            raise ValidationError("posterior needs at least 2 classes")
        if (p < 0).any():
            raise ValidationError("posterior has negative probabilities")
        if abs(p.sum() - 1.0) > _SUM_TOL:
            raise ValidationError(f"posterior sums to {p.sum():.8f}, not 1")
        object.__setattr__(self, "probs", p)


def _as_matrix(posteriors) -> np.ndarray:
    if isinstance(posteriors, np.ndarray):
        mat = np.asarray(posteriors, dtype=np.float64)
        if mat.ndim != 2:
            raise ValidationError(f"posterior matrix must be (n, C), got {mat.shape}")
        return mat
    rows = [p.probs if isinstance(p, ClassPosterior) else np.asarray(p, np.float64) for p in posteriors]
    if not rows:
        raise ValidationError("empty posterior list")
    return np.stack(rows)


def clip_score(
    clip: EmbeddingClip, audio_emb: np.ndarray, gamma: float = DEFAULT_GAMMA
) -> float:
    """Mean over the clip's frames of gamma * cos(frame, audio_emb)."""
    if gamma <= 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    a = np.asarray(audio_emb, dtype=np.float64).reshape(-1)
    if a.shape[0] != clip.dim:
        raise ValidationError(
            f"audio embedding dim {a.shape[0]} != clip frame dim {clip.dim}"
        )
    a_norm = np.linalg.norm(a)
    if a_norm == 0:
        raise ValidationError("audio embedding has zero norm")
    frames = clip.frames.astype(np.float64)
    f_norms = np.linalg.norm(frames, axis=1)
    if (f_norms == 0).any():
        raise ValidationError("clip contains a zero-norm frame")
    cosines = frames @ a / (f_norms * a_norm)
    return float(gamma * cosines.mean())


def paired_kl(real_posteriors, gen_posteriors) -> float:
    """Mean over aligned pairs of KL(real_i || gen_i), with probabilities
    floored at 1e-10 and renormalized before the log."""
    p = _as_matrix(real_posteriors)
    q = _as_matrix(gen_posteriors)
    if p.shape != q.shape:
        raise ValidationError(f"posterior shapes differ: {p.shape} vs {q.shape}")
    if p.shape[0] == 0:
        raise ValidationError("no posterior pairs")
    p = np.clip(p, _KL_FLOOR, None)
    p = p / p.sum(axis=1, keepdims=True)
    q = np.clip(q, _KL_FLOOR, None)
    q = q / q.sum(axis=1, keepdims=True)
    return float((p * (np.log(p) - np.log(q))).sum(axis=1).mean())


def accuracy(gen_posteriors, target_labels) -> float:
    """Fraction of argmax matches; np.argmax takes the lowest index on ties."""
    q = _as_matrix(gen_posteriors)
    labels = np.asarray(target_labels, dtype=np.int64).reshape(-1)
    if q.shape[0] != labels.shape[0]:
        raise ValidationError(
            f"{q.shape[0]} posteriors vs {labels.shape[0]} labels"
        )
    if q.shape[0] == 0:
        raise ValidationError("empty input")
    if labels.min() < 0 or labels.max() >= q.shape[1]:
        raise ValidationError(f"label outside [0, {q.shape[1]})")
    return float((np.argmax(q, axis=1) == labels).mean())

"""Codec training losses: sample-domain MSE, multi-resolution STFT, commitment.

The spectral term is an L1 distance between magnitude spectrograms at several
window sizes (Hann windows, 75% overlap), so it is zero exactly when the
magnitudes agree at every configured resolution and is invariant to waveform
sign flips. The codebook term is identically zero here: codebooks learn via
EMA updates instead of a gradient term.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from im2wav.audio import Waveform
from im2wav.errors import TrainingDiverged, ValidationError

# Keeps sqrt differentiable at silent bins without moving the zero of the loss.
_MAG_EPS = 1e-12


@dataclass(frozen=True)
class STFTConfig:
    window_sizes: tuple[int, ...] = (256, 512, 1024)
    hop_fraction: float = 0.25

    def __post_init__(self):
        if not self.window_sizes:
            raise ValidationError("at least one STFT window size is required")
        if any(w < 4 for w in self.window_sizes):
            raise ValidationError(f"window sizes too small: {self.window_sizes}")
        if not 0.0 < self.hop_fraction <= 1.0:
            raise ValidationError(f"hop_fraction must be in (0, 1], got {self.hop_fraction}")


@dataclass(frozen=True)
class LossWeights:
    reconstruction: float = 1.0
    spectral: float = 1.0
    commitment_beta: float = 0.25

    def __post_init__(self):
        for name in ("reconstruction", "spectral", "commitment_beta"):
            v = getattr(self, name)
            if v < 0 or not np.isfinite(v):
                raise ValidationError(f"loss weight {name} must be finite and >= 0, got {v}")


@dataclass
class CodecLossReport:
    """Per-component codec loss values; total is the config-weighted sum."""

    reconstruction: float
    spectral: float
    commitment: float
    codebook: float = 0.0
    total: float = field(default=0.0)

    def __post_init__(self):
        for name in ("reconstruction", "spectral", "commitment", "codebook", "total"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise TrainingDiverged(f"non-finite codec loss component {name}={v}", step=-1)
            if v < 0:
                raise ValidationError(f"codec loss component {name} must be >= 0, got {v}")


def _magnitude(x: torch.Tensor, n_fft: int, hop: int) -> torch.Tensor:
    window = torch.hann_window(n_fft, dtype=x.dtype, device=x.device)
    spec = torch.stft(
        x,
        n_fft=n_fft,
        hop_length=hop,
        win_length=n_fft,
        window=window,
        center=True,
        pad_mode="constant",
        return_complex=True,
    )
    return torch.sqrt(spec.real**2 + spec.imag**2 + _MAG_EPS)


def spectral_loss_t(x: torch.Tensor, x_hat: torch.Tensor, cfg: STFTConfig = STFTConfig()) -> torch.Tensor:
    """Tensor path; x and x_hat are (B, T) or (T,)."""
    if x.shape != x_hat.shape:
        raise ValidationError(f"length mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if x.ndim == 1:
        x, x_hat = x.unsqueeze(0), x_hat.unsqueeze(0)
    losses = []
    for win in cfg.window_sizes:
        hop = max(1, int(win * cfg.hop_fraction))
        losses.append((_magnitude(x, win, hop) - _magnitude(x_hat, win, hop)).abs().mean())
    return torch.stack(losses).mean()


def spectral_loss(x: Waveform, x_hat: Waveform, cfg: STFTConfig = STFTConfig()) -> float:
    if len(x) != len(x_hat):
        raise ValidationError(f"length mismatch: {len(x)} vs {len(x_hat)}")
    with torch.no_grad():
        val = spectral_loss_t(
            torch.from_numpy(x.samples.astype(np.float64)),
            torch.from_numpy(x_hat.samples.astype(np.float64)),
            cfg,
        )
    return float(val)


def codec_loss(
    x: Waveform,
    x_hat: Waveform,
    quantizer_stats: Sequence[float],
    weights: LossWeights = LossWeights(),
    stft: STFTConfig = STFTConfig(),
) -> CodecLossReport:
    """Assemble the full loss report for a reconstruction pair.

    `quantizer_stats` carries the per-level raw commitment values (mean
    squared latent-to-code distances) from the quantize pass.
    """
    if len(x) != len(x_hat):
        raise ValidationError(f"length mismatch: {len(x)} vs {len(x_hat)}")
    if len(quantizer_stats) == 0:
        raise ValidationError("quantizer_stats must carry at least one level")
    recon = float(np.mean((x.samples.astype(np.float64) - x_hat.samples.astype(np.float64)) ** 2))
    spec = spectral_loss(x, x_hat, stft)
    commit_raw = float(np.mean([float(c) for c in quantizer_stats]))
    return assemble_report(recon, spec, commit_raw, weights)


def assemble_report(
    recon: float, spec: float, commit_raw: float, weights: LossWeights
) -> CodecLossReport:
    commitment = weights.commitment_beta * commit_raw
    codebook = 0.0  # EMA-learned codebooks have no gradient loss term
    total = weights.reconstruction * recon + weights.spectral * spec + commitment + codebook
    return CodecLossReport(
        reconstruction=recon,
        spectral=spec,
        commitment=commitment,
        codebook=codebook,
        total=total,
    )
